//! CSV output with fixed schemas.
//!
//! Files start with `#` comment lines holding run metadata, then one header
//! line, then data rows. Floats are written with 17 significant digits so they
//! read back bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Int,
    Float,
    Text,
    Bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schema {
    Profile,
    Totals,
    Scan,
    Fits,
    Energy,
    Sweep,
    Oracle,
}

impl Schema {
    pub const ALL: [Schema; 7] =
        [Schema::Profile, Schema::Totals, Schema::Scan, Schema::Fits, Schema::Energy, Schema::Sweep, Schema::Oracle];

    pub fn columns(&self) -> &'static [(&'static str, Kind)] {
        use Kind::*;
        match self {
            Schema::Profile => &[("d", Int), ("c_d", Float), ("spread", Float), ("n_pairs", Int)],
            Schema::Totals => &[("n", Int), ("c_total", Float), ("tau_total", Float), ("xi", Int), ("c1", Float)],
            Schema::Scan => &[("j_xy", Float), ("d", Int), ("c_d", Float), ("dc_d_dj", Float)],
            Schema::Fits => &[("name", Text), ("coef", Text), ("value", Float), ("stderr_proxy", Float), ("r_squared", Float)],
            Schema::Energy => &[("sweep", Int), ("energy", Float), ("truncation_error", Float), ("entropy", Float)],
            Schema::Sweep => &[
                ("value", Float),
                ("converged", Bool),
                ("energy", Float),
                ("n", Int),
                ("c_total", Float),
                ("tau_total", Float),
                ("xi", Int),
                ("c1", Float),
            ],
            Schema::Oracle => {
                &[("quantity", Text), ("dmrg", Float), ("ed", Float), ("abs_diff", Float), ("tolerance", Float), ("pass", Bool)]
            }
        }
    }

    pub fn header(&self) -> String {
        self.columns().iter().map(|c| c.0).collect::<Vec<_>>().join(",")
    }

    pub fn from_header(line: &str) -> Option<Schema> {
        Schema::ALL.into_iter().find(|s| s.header() == line.trim_end_matches('\r'))
    }
}

/// Float in scientific notation with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    // Normalise negative zero so identical values always print identically.
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.16e}")
}

#[derive(Clone, Debug)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Bool(bool),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => fmt_f64(*v),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// In-memory table; rendered and written in one go.
#[derive(Clone, Debug)]
pub struct Table {
    pub schema: Schema,
    comments: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(schema: Schema) -> Self {
        Self { schema, comments: Vec::new(), rows: Vec::new() }
    }

    pub fn comment(&mut self, line: impl Into<String>) -> &mut Self {
        let line: String = line.into();
        for l in line.lines() {
            self.comments.push(l.to_string());
        }
        self
    }

    pub fn row(&mut self, cells: Vec<Cell>) -> &mut Self {
        assert_eq!(cells.len(), self.schema.columns().len(), "row width must match the {:?} schema", self.schema);
        self.rows.push(cells);
        self
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.comments {
            let _ = writeln!(out, "# {c}");
        }
        out.push_str(&self.body());
        out
    }

    /// Header and rows, without the comment preamble.
    pub fn body(&self) -> String {
        let mut out = self.schema.header();
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::render).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.render())
    }
}

/// Lines of a CSV file that are not comments.
pub fn body_of(text: &str) -> String {
    text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect()
}

/// `key=value` pairs from `# key=value` comment lines.
pub fn comment_value(text: &str, key: &str) -> Option<String> {
    text.lines()
        .filter_map(|l| l.strip_prefix("# "))
        .find_map(|l| l.strip_prefix(key).and_then(|rest| rest.strip_prefix('=')).map(|v| v.trim().to_string()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParsedTable {
    pub schema: Schema,
    pub rows: Vec<Vec<String>>,
}

impl ParsedTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.schema.columns().iter().position(|c| c.0 == name)
    }

    pub fn floats(&self, name: &str) -> Result<Vec<f64>, String> {
        let k = self.column(name).ok_or_else(|| format!("no column {name}"))?;
        self.rows.iter().map(|r| parse_float(&r[k]).ok_or_else(|| format!("column {name}: bad number {:?}", r[k]))).collect()
    }

    pub fn ints(&self, name: &str) -> Result<Vec<usize>, String> {
        let k = self.column(name).ok_or_else(|| format!("no column {name}"))?;
        self.rows.iter().map(|r| r[k].parse::<usize>().map_err(|_| format!("column {name}: bad integer {:?}", r[k]))).collect()
    }
}

fn parse_float(s: &str) -> Option<f64> {
    match s {
        "NaN" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}

/// Parses and type-checks a CSV file against whichever schema its header names.
pub fn parse_table(text: &str) -> Result<ParsedTable, String> {
    let body = body_of(text);
    let header = body.lines().next().ok_or("file has no header line")?;
    let schema = Schema::from_header(header).ok_or_else(|| format!("unrecognised header {header:?}"))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let cols = schema.columns();
    let mut rows = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| format!("row {}: {e}", k + 1))?;
        if rec.len() != cols.len() {
            return Err(format!("row {}: expected {} fields, got {}", k + 1, cols.len(), rec.len()));
        }
        for ((name, kind), field) in cols.iter().zip(rec.iter()) {
            let ok = match kind {
                Kind::Int => field.parse::<i64>().is_ok(),
                Kind::Float => parse_float(field).is_some(),
                Kind::Bool => field == "true" || field == "false",
                Kind::Text => !field.is_empty(),
            };
            if !ok {
                return Err(format!("row {}, column {name}: {field:?} is not a valid {kind:?}", k + 1));
            }
        }
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(ParsedTable { schema, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headers_are_exact() {
        assert_eq!(Schema::Profile.header(), "d,c_d,spread,n_pairs");
        assert_eq!(Schema::Totals.header(), "n,c_total,tau_total,xi,c1");
        assert_eq!(Schema::Scan.header(), "j_xy,d,c_d,dc_d_dj");
        assert_eq!(Schema::Fits.header(), "name,coef,value,stderr_proxy,r_squared");
    }

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, std::f64::consts::PI] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
            let digits = s.split('e').next().unwrap().chars().filter(|c| c.is_ascii_digit()).count();
            assert_eq!(digits, 17);
        }
        assert_eq!(fmt_f64(-0.0), fmt_f64(0.0));
    }

    #[test]
    fn render_and_parse() {
        let mut t = Table::new(Schema::Profile);
        t.comment("noise_floor=1e-12").comment("model a=1\nsecond line");
        t.row(vec![1usize.into(), 0.25.into(), 0.0.into(), 7usize.into()]);
        t.row(vec![2usize.into(), 0.125.into(), 1e-9.into(), 6usize.into()]);
        let text = t.render();
        assert!(text.starts_with("# noise_floor=1e-12\n# model a=1\n# second line\nd,c_d,spread,n_pairs\n"));
        assert_eq!(comment_value(&text, "noise_floor").as_deref(), Some("1e-12"));
        let p = parse_table(&text).unwrap();
        assert_eq!(p.schema, Schema::Profile);
        assert_eq!(p.floats("c_d").unwrap(), vec![0.25, 0.125]);
        assert_eq!(p.ints("n_pairs").unwrap(), vec![7, 6]);
        assert_eq!(body_of(&text), t.body());
    }

    #[test]
    fn parse_rejects_bad_rows() {
        assert!(parse_table("a,b\n1,2\n").unwrap_err().contains("unrecognised header"));
        assert!(parse_table("d,c_d,spread,n_pairs\n1,0.5,0.0\n").is_err());
        let err = parse_table("d,c_d,spread,n_pairs\n1,abc,0.0,3\n").unwrap_err();
        assert!(err.contains("c_d"), "{err}");
        assert!(parse_table("").is_err());
    }
}
