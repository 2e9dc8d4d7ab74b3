//! Plain-text formats: instances, schemes and measurements.
//!
//! All three are comma-separated with a one-line header. Blank lines and
//! lines starting with `#` are ignored, except for the `# n_streams:`
//! directive of scheme files.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use streamopt::calibrate::MeasurementRecord;
use streamopt::{Dataset, EventLineIncidence, LineCatalog, LineRecord, Scheme};

use crate::error::ParseError;

pub const CATALOG_HEADER: &str = "line,prescale,turbo,persistreco,module";
pub const INCIDENCE_HEADER: &str = "event,line";
pub const SCHEME_HEADER: &str = "module,stream";
pub const MEASUREMENT_HEADER: &str = "scheme_id,stream_id,n_lines,measured_time_s,measured_size_kb";
const N_STREAMS_DIRECTIVE: &str = "n_streams:";

type ParseResult<T> = Result<T, ParseError>;

/// A non-blank, non-comment line split into trimmed fields with their columns.
struct Record<'a> {
    line: usize,
    fields: Vec<(usize, &'a str)>,
}

impl<'a> Record<'a> {
    fn split(line: usize, text: &'a str) -> Self {
        let mut fields = Vec::new();
        let mut start = 0;
        for piece in text.split(',') {
            let lead = piece.len() - piece.trim_start().len();
            fields.push((start + lead + 1, piece.trim()));
            start += piece.len() + 1;
        }
        Self { line, fields }
    }

    fn text(&self) -> String {
        self.fields.iter().map(|(_, f)| *f).collect::<Vec<_>>().join(",")
    }

    fn expect_len(&self, n: usize) -> ParseResult<()> {
        if self.fields.len() != n {
            let column = self.fields.get(n).map_or(1, |f| f.0);
            return Err(self.error_at(
                column,
                format!("expected {n} fields, found {}", self.fields.len()),
            ));
        }
        Ok(())
    }

    fn error_at(&self, column: usize, message: impl Into<String>) -> ParseError {
        ParseError::new(self.line, column, message)
    }

    fn field(&self, i: usize) -> (usize, &'a str) {
        self.fields[i]
    }

    fn non_empty(&self, i: usize, what: &str) -> ParseResult<&'a str> {
        let (col, f) = self.field(i);
        if f.is_empty() {
            return Err(self.error_at(col, format!("empty {what}")));
        }
        Ok(f)
    }

    fn number<T: std::str::FromStr>(&self, i: usize, what: &str) -> ParseResult<T> {
        let (col, f) = self.field(i);
        f.parse()
            .map_err(|_| self.error_at(col, format!("invalid {what} `{f}`")))
    }

    fn flag(&self, i: usize, what: &str) -> ParseResult<bool> {
        let (col, f) = self.field(i);
        match f.to_ascii_lowercase().as_str() {
            "1" | "true" | "yes" => Ok(true),
            "0" | "false" | "no" => Ok(false),
            _ => Err(self.error_at(col, format!("invalid {what} flag `{f}`"))),
        }
    }
}

fn records(text: &str) -> impl Iterator<Item = Record<'_>> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let t = raw.trim();
        (!t.is_empty() && !t.starts_with('#')).then(|| Record::split(i + 1, raw))
    })
}

fn check_header(record: Option<&Record>, header: &str) -> ParseResult<()> {
    match record {
        Some(r) if r.text() == header => Ok(()),
        Some(r) => Err(r.error_at(1, format!("expected header `{header}`, found `{}`", r.text()))),
        None => Err(ParseError::new(1, 1, format!("missing header `{header}`"))),
    }
}

/// A parsed instance file.
#[derive(Debug, Clone)]
pub struct Instance {
    pub dataset: Dataset,
    /// Identifier of each kept event, in dataset order.
    pub event_ids: Vec<String>,
    /// Events listed without any passing line.
    pub dropped_events: usize,
}

/// Catalog and per-event passing lines before validation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawInstance {
    pub lines: Vec<LineRecord>,
    pub event_ids: Vec<String>,
    pub rows: Vec<Vec<usize>>,
}

pub fn parse_raw_instance(text: &str) -> ParseResult<RawInstance> {
    let mut recs = records(text).peekable();
    check_header(recs.next().as_ref(), CATALOG_HEADER)?;

    let mut lines = Vec::new();
    let mut by_name: HashMap<String, usize> = HashMap::new();
    let mut saw_incidence_header = false;
    for r in recs.by_ref() {
        if r.text() == INCIDENCE_HEADER {
            saw_incidence_header = true;
            break;
        }
        r.expect_len(5)?;
        let name = r.non_empty(0, "line name")?;
        if by_name.contains_key(name) {
            return Err(r.error_at(r.field(0).0, format!("duplicate line name `{name}`")));
        }
        by_name.insert(name.to_string(), lines.len());
        lines.push(
            LineRecord::new(name, r.non_empty(4, "module name")?)
                .with_prescale(r.number(1, "prescale")?)
                .with_flags(r.flag(2, "turbo")?, r.flag(3, "persistreco")?),
        );
    }
    if !saw_incidence_header {
        return Err(ParseError::new(
            text.lines().count().max(1),
            1,
            format!("no events: missing `{INCIDENCE_HEADER}` section"),
        ));
    }

    let mut event_ids: Vec<String> = Vec::new();
    let mut event_index: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<Vec<usize>> = Vec::new();
    let mut seen_pairs = HashSet::new();
    for r in recs {
        r.expect_len(2)?;
        let id = r.non_empty(0, "event id")?;
        let e = *event_index.entry(id.to_string()).or_insert_with(|| {
            event_ids.push(id.to_string());
            rows.push(Vec::new());
            rows.len() - 1
        });
        let (col, name) = r.field(1);
        if name.is_empty() {
            continue;
        }
        let l = *by_name
            .get(name)
            .ok_or_else(|| r.error_at(col, format!("unknown line name `{name}`")))?;
        if !seen_pairs.insert((e, l)) {
            return Err(r.error_at(col, format!("line `{name}` listed twice for event `{id}`")));
        }
        rows[e].push(l);
    }
    if rows.is_empty() {
        return Err(ParseError::new(text.lines().count().max(1), 1, "no events"));
    }
    Ok(RawInstance {
        lines,
        event_ids,
        rows,
    })
}

/// Errors of [`parse_instance`]: syntax or dataset validation.
#[derive(Debug, thiserror::Error)]
pub enum InstanceError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("no events: every listed event passes no line")]
    NoEvents,
    #[error(transparent)]
    Invalid(#[from] streamopt::Error),
}

pub fn parse_instance(text: &str) -> Result<Instance, InstanceError> {
    let raw = parse_raw_instance(text)?;
    let n_listed = raw.rows.len();
    let mut event_ids = Vec::new();
    let mut kept = Vec::new();
    for (id, row) in raw.event_ids.into_iter().zip(raw.rows) {
        if !row.is_empty() {
            event_ids.push(id);
            kept.push(row);
        }
    }
    if kept.is_empty() {
        return Err(InstanceError::NoEvents);
    }
    let dropped_events = n_listed - kept.len();
    if dropped_events > 0 {
        log::info!("dropped {dropped_events} events that pass no line");
    }
    let (incidence, _) = EventLineIncidence::from_rows(raw.lines.len(), kept)?;
    let dataset = Dataset::new(incidence, LineCatalog::new(raw.lines))?;
    Ok(Instance {
        dataset,
        event_ids,
        dropped_events,
    })
}

fn flag(b: bool) -> u8 {
    u8::from(b)
}

/// Instance text with events named `e<index>`; events with an empty row are
/// written as `e<index>,` so that they are counted as dropped on reload.
pub fn write_instance(lines: &[LineRecord], rows: &[Vec<usize>]) -> String {
    let mut out = String::new();
    writeln!(out, "{CATALOG_HEADER}").unwrap();
    for line in lines {
        writeln!(
            out,
            "{},{},{},{},{}",
            line.name,
            line.prescale,
            flag(line.is_turbo),
            flag(line.is_persist_reco),
            line.module
        )
        .unwrap();
    }
    writeln!(out).unwrap();
    writeln!(out, "{INCIDENCE_HEADER}").unwrap();
    for (e, row) in rows.iter().enumerate() {
        if row.is_empty() {
            writeln!(out, "e{e},").unwrap();
        }
        for &l in row {
            writeln!(out, "e{e},{}", lines[l].name).unwrap();
        }
    }
    out
}

/// Scheme text: a stream-count directive, then one `module,stream` row per module.
pub fn write_scheme(catalog: &LineCatalog, scheme: &Scheme) -> String {
    let mut out = String::new();
    writeln!(out, "# {N_STREAMS_DIRECTIVE} {}", scheme.n_streams()).unwrap();
    writeln!(out, "{SCHEME_HEADER}").unwrap();
    for (name, &s) in catalog.modules().iter().zip(scheme.assignment()) {
        writeln!(out, "{name},{s}").unwrap();
    }
    out
}

/// Reads a scheme for the modules of `catalog`. Without a directive the
/// stream count is one more than the largest index used.
pub fn parse_scheme(text: &str, catalog: &LineCatalog) -> ParseResult<Scheme> {
    let mut declared: Option<(usize, usize)> = None;
    for (i, raw) in text.lines().enumerate() {
        let Some(rest) = raw.trim().strip_prefix('#') else {
            continue;
        };
        if let Some(value) = rest.trim().strip_prefix(N_STREAMS_DIRECTIVE) {
            let col = raw.find(N_STREAMS_DIRECTIVE).unwrap() + N_STREAMS_DIRECTIVE.len() + 1;
            let k: usize = value
                .trim()
                .parse()
                .map_err(|_| ParseError::new(i + 1, col, format!("invalid stream count `{}`", value.trim())))?;
            if k == 0 {
                return Err(ParseError::new(i + 1, col, "stream count must be at least 1"));
            }
            declared = Some((k, i + 1));
        }
    }

    let mut recs = records(text);
    check_header(recs.next().as_ref(), SCHEME_HEADER)?;
    let mut assignment: Vec<Option<usize>> = vec![None; catalog.n_modules()];
    let mut last_line = 1;
    for r in recs {
        r.expect_len(2)?;
        last_line = r.line;
        let (col, name) = r.field(0);
        let m = catalog
            .module_index(name)
            .ok_or_else(|| r.error_at(col, format!("unknown module `{name}`")))?;
        if assignment[m].is_some() {
            return Err(r.error_at(col, format!("module `{name}` assigned twice")));
        }
        let s: usize = r.number(1, "stream index")?;
        if let Some((k, _)) = declared {
            if s >= k {
                return Err(r.error_at(r.field(1).0, format!("stream {s} out of range for {k} streams")));
            }
        }
        assignment[m] = Some(s);
    }
    let assignment = assignment
        .into_iter()
        .enumerate()
        .map(|(m, s)| {
            s.ok_or_else(|| {
                ParseError::new(last_line, 1, format!("module `{}` is not assigned", catalog.modules()[m]))
            })
        })
        .collect::<ParseResult<Vec<usize>>>()?;
    let n_streams = match declared {
        Some((k, _)) => k,
        None => assignment.iter().max().map_or(1, |&s| s + 1),
    };
    Ok(Scheme::new(n_streams, assignment).expect("stream indices checked"))
}

/// One row of a measurement file.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub scheme_id: String,
    pub stream_id: String,
    pub n_lines: usize,
    pub measured_time: f64,
    pub measured_size: f64,
}

impl Measurement {
    pub fn into_record(self, model_t_term: f64, model_s_term: f64) -> MeasurementRecord {
        MeasurementRecord {
            scheme_id: self.scheme_id,
            stream_id: self.stream_id,
            measured_time: self.measured_time,
            measured_size: self.measured_size,
            n_lines: self.n_lines,
            model_t_term,
            model_s_term,
        }
    }
}

pub fn parse_measurements(text: &str) -> ParseResult<Vec<Measurement>> {
    let mut recs = records(text);
    check_header(recs.next().as_ref(), MEASUREMENT_HEADER)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for r in recs {
        r.expect_len(5)?;
        let scheme_id = r.non_empty(0, "scheme id")?;
        let stream_id = r.non_empty(1, "stream id")?;
        if !seen.insert((scheme_id, stream_id)) {
            return Err(r.error_at(r.field(1).0, format!("stream `{stream_id}` of scheme `{scheme_id}` listed twice")));
        }
        let measured_time: f64 = r.number(3, "time")?;
        let measured_size: f64 = r.number(4, "size")?;
        for (i, v) in [(3, measured_time), (4, measured_size)] {
            if !v.is_finite() || v < 0.0 {
                return Err(r.error_at(r.field(i).0, format!("value `{}` must be finite and non-negative", r.field(i).1)));
            }
        }
        out.push(Measurement {
            scheme_id: scheme_id.to_string(),
            stream_id: stream_id.to_string(),
            n_lines: r.number(2, "line count")?,
            measured_time,
            measured_size,
        });
    }
    if out.is_empty() {
        return Err(ParseError::new(text.lines().count().max(1), 1, "no measurements"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# three lines in two modules
line,prescale,turbo,persistreco,module
A,1,1,0,charm
B,0.5,1,1,charm
C,1,true,false,beauty

event,line
1,A
1,B
2,C
3,
";

    #[test]
    fn parses_sample_instance() {
        let inst = parse_instance(SAMPLE).unwrap();
        let ds = &inst.dataset;
        assert_eq!(ds.catalog().n_lines(), 3);
        assert_eq!(ds.catalog().modules(), ["charm", "beauty"]);
        assert_eq!(ds.incidence().n_events(), 2);
        assert_eq!(inst.event_ids, ["1", "2"]);
        assert_eq!(inst.dropped_events, 1);
        assert_eq!(ds.catalog().line(1).prescale, 0.5);
        assert!(ds.catalog().line(1).is_persist_reco);
    }

    #[test]
    fn unknown_line_is_named_with_position() {
        let text = SAMPLE.replace("2,C", "2,Z");
        let err = parse_raw_instance(&text).unwrap_err();
        assert_eq!((err.line, err.column), (10, 3));
        assert!(err.message.contains("`Z`"), "{err}");
    }

    #[test]
    fn empty_incidence_section_has_no_events() {
        let text = SAMPLE.split("1,A").next().unwrap();
        let err = parse_raw_instance(text).unwrap_err();
        assert!(err.to_string().contains("no events"), "{err}");
        let header_only = "line,prescale,turbo,persistreco,module\nA,1,1,0,m\n";
        assert!(parse_raw_instance(header_only).unwrap_err().message.contains("no events"));
        let all_empty = "line,prescale,turbo,persistreco,module\nA,1,1,0,m\nevent,line\n1,\n";
        assert!(matches!(parse_instance(all_empty), Err(InstanceError::NoEvents)));
    }

    #[test]
    fn syntax_errors_carry_columns() {
        let bad_prescale = SAMPLE.replace("B,0.5", "B,half");
        let err = parse_raw_instance(&bad_prescale).unwrap_err();
        assert_eq!((err.line, err.column), (4, 3));
        let bad_flag = SAMPLE.replace("C,1,true", "C,1,maybe");
        assert_eq!(parse_raw_instance(&bad_flag).unwrap_err().column, 5);
        let short = SAMPLE.replace("A,1,1,0,charm", "A,1,1,0");
        assert!(parse_raw_instance(&short).unwrap_err().message.contains("expected 5 fields"));
        let bad_header = SAMPLE.replace("line,prescale", "name,prescale");
        assert_eq!(parse_raw_instance(&bad_header).unwrap_err().line, 2);
        let twice = SAMPLE.replace("1,B", "1,A");
        assert!(parse_raw_instance(&twice).unwrap_err().message.contains("twice"));
    }

    #[test]
    fn validation_failures_surface() {
        let text = SAMPLE.replace("B,0.5", "B,1.5");
        assert!(matches!(parse_instance(&text), Err(InstanceError::Invalid(_))));
    }

    #[test]
    fn instance_round_trip() {
        let inst = parse_instance(SAMPLE).unwrap();
        let ds = &inst.dataset;
        let rows: Vec<Vec<usize>> = ds.incidence().rows().map(|r| r.iter().map(|&l| l as usize).collect()).collect();
        let text = write_instance(ds.catalog().lines(), &rows);
        let again = parse_instance(&text).unwrap();
        assert_eq!(again.dataset.catalog().lines(), ds.catalog().lines());
        assert_eq!(again.dataset.incidence(), ds.incidence());
    }

    #[test]
    fn scheme_round_trip_and_errors() {
        let catalog = parse_instance(SAMPLE).unwrap().dataset.catalog().clone();
        let scheme = Scheme::new(3, vec![2, 0]).unwrap();
        let text = write_scheme(&catalog, &scheme);
        assert_eq!(text, "# n_streams: 3\nmodule,stream\ncharm,2\nbeauty,0\n");
        assert_eq!(parse_scheme(&text, &catalog).unwrap(), scheme);

        let implicit = parse_scheme("module,stream\nbeauty,1\ncharm,0\n", &catalog).unwrap();
        assert_eq!(implicit, Scheme::new(2, vec![0, 1]).unwrap());

        let missing = parse_scheme("module,stream\ncharm,0\n", &catalog).unwrap_err();
        assert!(missing.message.contains("`beauty`"));
        let unknown = parse_scheme("module,stream\ncharm,0\nbottom,1\n", &catalog).unwrap_err();
        assert!(unknown.message.contains("`bottom`"));
        let out_of_range = parse_scheme("# n_streams: 2\nmodule,stream\ncharm,0\nbeauty,2\n", &catalog);
        assert_eq!(out_of_range.unwrap_err().line, 4);
        assert!(parse_scheme("# n_streams: 0\nmodule,stream\n", &catalog).is_err());
    }

    #[test]
    fn measurements() {
        let text = "scheme_id,stream_id,n_lines,measured_time_s,measured_size_kb\na,s0,2,19,100\na,s1,1,14.5,20\n";
        let m = parse_measurements(text).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[1].measured_time, 14.5);
        assert_eq!(m[0].n_lines, 2);
        let negative = text.replace("14.5", "-1");
        assert_eq!(parse_measurements(&negative).unwrap_err().column, 8);
        let dup = text.replace("a,s1", "a,s0");
        assert!(parse_measurements(&dup).unwrap_err().message.contains("twice"));
    }
}
