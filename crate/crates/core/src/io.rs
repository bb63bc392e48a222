//! File formats: spike rasters and raster sets (plain text), networks (JSON),
//! matrices and traces (CSV).
//!
//! Raster file:
//! ```text
//! L K
//! i t
//! ...
//! ```
//! Raster-set file:
//! ```text
//! L K num_rasters
//! raster <idx> label <c> ref <t> events <n>
//! i t            (n lines)
//! ...
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Result, SkimError};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::network::{NetworkParams, SkimNetwork, SpikeRaster};
use crate::patterns::LabeledRasterSet;

/// Writes `contents` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| validation(format!("`{}` is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn parse_err(line: usize, message: impl Into<String>) -> SkimError {
    SkimError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_fields<const N: usize>(line: &str, lineno: usize) -> Result<[usize; N]> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != N {
        return Err(parse_err(
            lineno,
            format!("expected {N} integers, found `{line}`"),
        ));
    }
    let mut out = [0usize; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p
            .parse()
            .map_err(|_| parse_err(lineno, format!("`{p}` is not a non-negative integer")))?;
    }
    Ok(out)
}

fn check_event(c: usize, t: usize, l: usize, k: usize, lineno: usize) -> Result<()> {
    if c >= l || t >= k {
        return Err(validation(format!(
            "line {lineno}: event ({c}, {t}) outside {l} channels x {k} steps"
        )));
    }
    Ok(())
}

fn no_duplicates(events: &[(usize, usize)], lineno: usize) -> Result<()> {
    let mut sorted = events.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(validation(format!(
            "raster ending at line {lineno} repeats a (channel, timestep) event"
        )));
    }
    Ok(())
}

/// Significant-line iterator: skips blank lines, keeps 1-based numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub fn parse_raster(text: &str) -> Result<SpikeRaster> {
    let mut it = lines(text);
    let (hl, header) = it
        .next()
        .ok_or_else(|| parse_err(1, "missing `L K` header"))?;
    let [l, k] = parse_fields::<2>(header, hl)?;
    let mut events = Vec::new();
    let mut last = hl;
    for (n, line) in it {
        let [c, t] = parse_fields::<2>(line, n)?;
        check_event(c, t, l, k, n)?;
        events.push((c, t));
        last = n;
    }
    no_duplicates(&events, last)?;
    SpikeRaster::new(l, k, events)
}

pub fn format_raster(r: &SpikeRaster) -> String {
    let mut s = format!("{} {}\n", r.num_channels(), r.num_steps());
    for &(c, t) in r.events() {
        let _ = writeln!(s, "{c} {t}");
    }
    s
}

pub fn load_raster(path: &Path) -> Result<SpikeRaster> {
    parse_raster(&fs::read_to_string(path)?)
}

pub fn save_raster(r: &SpikeRaster, path: &Path) -> Result<()> {
    write_atomic(path, format_raster(r).as_bytes())
}

pub fn parse_raster_set(text: &str) -> Result<LabeledRasterSet> {
    let mut it = lines(text).peekable();
    let (hl, header) = it
        .next()
        .ok_or_else(|| parse_err(1, "missing `L K num_rasters` header"))?;
    let [l, k, count] = parse_fields::<3>(header, hl)?;
    let (mut rasters, mut labels, mut refs) = (Vec::new(), Vec::new(), Vec::new());
    for expected_idx in 0..count {
        let (n, line) = it.next().ok_or_else(|| {
            parse_err(
                hl,
                format!("expected {count} rasters, found {expected_idx}"),
            )
        })?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        let keywords_ok = parts.len() == 8
            && parts[0] == "raster"
            && parts[2] == "label"
            && parts[4] == "ref"
            && parts[6] == "events";
        if !keywords_ok {
            return Err(parse_err(
                n,
                format!("expected `raster <idx> label <c> ref <t> events <n>`, found `{line}`"),
            ));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| parse_err(n, format!("`{s}` is not a non-negative integer")))
        };
        let (idx, label, reference, num_events) = (
            num(parts[1])?,
            num(parts[3])?,
            num(parts[5])?,
            num(parts[7])?,
        );
        if idx != expected_idx {
            return Err(parse_err(
                n,
                format!("raster index {idx} out of sequence (expected {expected_idx})"),
            ));
        }
        if reference >= k {
            return Err(validation(format!(
                "line {n}: reference time {reference} outside {k} steps"
            )));
        }
        let mut events = Vec::with_capacity(num_events);
        let mut last = n;
        for _ in 0..num_events {
            let (en, eline) = it
                .next()
                .ok_or_else(|| parse_err(last, "unexpected end of file inside raster"))?;
            let [c, t] = parse_fields::<2>(eline, en)?;
            check_event(c, t, l, k, en)?;
            events.push((c, t));
            last = en;
        }
        no_duplicates(&events, last)?;
        rasters.push(SpikeRaster::new(l, k, events)?);
        labels.push(label);
        refs.push(reference);
    }
    if let Some((n, line)) = it.next() {
        return Err(parse_err(n, format!("trailing content `{line}`")));
    }
    LabeledRasterSet::new(l, k, rasters, labels, refs)
}

pub fn format_raster_set(set: &LabeledRasterSet) -> String {
    let mut s = format!("{} {} {}\n", set.num_channels, set.num_steps, set.len());
    for (i, ((r, label), reference)) in set
        .rasters
        .iter()
        .zip(&set.labels)
        .zip(&set.reference_times)
        .enumerate()
    {
        let _ = writeln!(
            s,
            "raster {i} label {label} ref {reference} events {}",
            r.len()
        );
        for &(c, t) in r.events() {
            let _ = writeln!(s, "{c} {t}");
        }
    }
    s
}

pub fn load_raster_set(path: &Path) -> Result<LabeledRasterSet> {
    parse_raster_set(&fs::read_to_string(path)?)
}

pub fn save_raster_set(set: &LabeledRasterSet, path: &Path) -> Result<()> {
    write_atomic(path, format_raster_set(set).as_bytes())
}

#[derive(Serialize, Deserialize)]
struct NetworkDocument {
    num_inputs: usize,
    num_dendrites: usize,
    num_outputs: usize,
    seed: u64,
    threshold: f64,
    target_amplitude: f64,
    soma_reset: bool,
    swapped_order: bool,
    support_epsilon: f64,
    weight_range: (f64, f64),
    kernel_family: KernelFamily,
    input_weights: Vec<Vec<f64>>,
    kernels: Vec<KernelSpec>,
    output_weights: Option<Vec<Vec<f64>>>,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(crate::error::dimension(format!(
            "{what} rows must each have {ncols} entries"
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

pub fn network_to_json(net: &SkimNetwork) -> Result<String> {
    let p = net.params();
    let doc = NetworkDocument {
        num_inputs: p.num_inputs,
        num_dendrites: p.num_dendrites,
        num_outputs: p.num_outputs,
        seed: p.seed,
        threshold: p.threshold,
        target_amplitude: p.target_amplitude,
        soma_reset: p.soma_reset,
        swapped_order: p.swapped_order,
        support_epsilon: p.support_epsilon,
        weight_range: p.weight_range,
        kernel_family: p.kernel_family.clone(),
        input_weights: to_rows(net.input_weights()),
        kernels: net.kernels().to_vec(),
        output_weights: net.output_weights().map(to_rows),
    };
    let mut s = serde_json::to_string_pretty(&doc)?;
    s.push('\n');
    Ok(s)
}

pub fn network_from_json(text: &str) -> Result<SkimNetwork> {
    let doc: NetworkDocument = serde_json::from_str(text)?;
    if doc.kernels.len() != doc.num_dendrites || doc.input_weights.len() != doc.num_dendrites {
        return Err(crate::error::dimension(format!(
            "network declares {} dendrites but lists {} kernels and {} weight rows",
            doc.num_dendrites,
            doc.kernels.len(),
            doc.input_weights.len()
        )));
    }
    let params = NetworkParams {
        num_inputs: doc.num_inputs,
        num_dendrites: doc.num_dendrites,
        num_outputs: doc.num_outputs,
        kernel_family: doc.kernel_family,
        weight_range: doc.weight_range,
        threshold: doc.threshold,
        target_amplitude: doc.target_amplitude,
        seed: doc.seed,
        soma_reset: doc.soma_reset,
        swapped_order: doc.swapped_order,
        support_epsilon: doc.support_epsilon,
    };
    let w1 = from_rows(&doc.input_weights, doc.num_inputs, "input_weights")?;
    let w2 = match &doc.output_weights {
        Some(rows) => {
            if rows.len() != doc.num_outputs {
                return Err(crate::error::dimension(
                    "output_weights must have num_outputs rows",
                ));
            }
            Some(from_rows(rows, doc.num_dendrites, "output_weights")?)
        }
        None => None,
    };
    SkimNetwork::from_parts(params, w1, doc.kernels, w2)
}

pub fn load_network(path: &Path) -> Result<SkimNetwork> {
    network_from_json(&fs::read_to_string(path)?)
}

pub fn save_network(net: &SkimNetwork, path: &Path) -> Result<()> {
    write_atomic(path, network_to_json(net)?.as_bytes())
}

/// Formats a float with 9 significant digits, `%.9g` style.
pub fn fmt_float(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    // Rounding can bump the exponent (9.9999999995 -> 10.0000000).
    let sci = format!("{v:.8e}");
    let mantissa_exp: i32 = sci
        .split('e')
        .nth(1)
        .and_then(|e| e.parse().ok())
        .unwrap_or(exp);
    if (-5..9).contains(&mantissa_exp) {
        let decimals = (8 - mantissa_exp).max(0) as usize;
        let fixed = format!("{v:.decimals$}");
        trim_zeros(&fixed)
    } else {
        let (m, e) = sci.split_once('e').unwrap_or((&sci, "0"));
        format!("{}e{}", trim_zeros(m), e)
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

/// CSV with a header row and LF line endings.
pub fn csv_string(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Matrix as CSV: header `c0..c{n-1}`, one line per row.
pub fn matrix_csv(m: &DMatrix<f64>, prefix: &str) -> String {
    let header: Vec<String> = (0..m.ncols()).map(|j| format!("{prefix}{j}")).collect();
    csv_string(
        &header,
        m.row_iter()
            .map(|r| r.iter().map(|&v| fmt_float(v)).collect()),
    )
}

/// Output weights as CSV, `N` rows by `M` columns.
pub fn save_weights_csv(w: &DMatrix<f64>, path: &Path) -> Result<()> {
    write_atomic(path, matrix_csv(w, "dendrite_").as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::ParamRange;
    use proptest::prelude::*;

    #[test]
    fn raster_parse_example() {
        let mut text = String::from("40 1000\n");
        for i in 0..23 {
            text.push_str(&format!("{} {}\n", i, i * 40));
        }
        let r = parse_raster(&text).unwrap();
        assert_eq!((r.num_channels(), r.num_steps(), r.len()), (40, 1000, 23));
        assert_eq!(format_raster(&r), text);
    }

    #[test]
    fn raster_parse_errors() {
        assert!(matches!(
            parse_raster("40 1000\n41 5\n"),
            Err(SkimError::Validation(_))
        ));
        assert!(matches!(
            parse_raster("40 1000\n1 x\n"),
            Err(SkimError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_raster("40\n"),
            Err(SkimError::Parse { line: 1, .. })
        ));
        assert!(matches!(parse_raster(""), Err(SkimError::Parse { .. })));
        assert!(matches!(
            parse_raster("4 10\n1 2\n1 2\n"),
            Err(SkimError::Validation(_))
        ));
    }

    #[test]
    fn canonical_reserialization() {
        // Out-of-order events come back sorted by time.
        let text = "3 50\n2 40\n0 3\n1 3\n";
        let r = parse_raster(text).unwrap();
        let canonical = format_raster(&r);
        assert_eq!(canonical, "3 50\n0 3\n1 3\n2 40\n");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.txt");
        save_raster(&r, &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), canonical);
        assert_eq!(load_raster(&path).unwrap(), r);
    }

    #[test]
    fn raster_set_errors() {
        let bad_header = "4 10 1\nraster 0 lbl 0 ref 1 events 0\n";
        assert!(matches!(
            parse_raster_set(bad_header),
            Err(SkimError::Parse { line: 2, .. })
        ));
        let short = "4 10 2\nraster 0 label 0 ref 1 events 1\n0 1\n";
        assert!(matches!(
            parse_raster_set(short),
            Err(SkimError::Parse { .. })
        ));
        let range = "4 10 1\nraster 0 label 0 ref 1 events 1\n4 1\n";
        assert!(matches!(
            parse_raster_set(range),
            Err(SkimError::Validation(_))
        ));
        let trailing = "4 10 1\nraster 0 label 0 ref 1 events 0\n1 1\n";
        assert!(matches!(
            parse_raster_set(trailing),
            Err(SkimError::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn network_json_round_trip_is_exact() {
        let fam = KernelFamily::alpha(ParamRange::new(0.0, 100.0));
        let mut net = SkimNetwork::new(NetworkParams::new(4, 12, 2, fam).seed(42)).unwrap();
        let json = network_to_json(&net).unwrap();
        let back = network_from_json(&json).unwrap();
        assert_eq!(back, net);
        assert_eq!(network_to_json(&back).unwrap(), json);

        net.set_output_weights(DMatrix::from_fn(2, 12, |n, j| (n as f64 - j as f64) / 7.0))
            .unwrap();
        let json = network_to_json(&net).unwrap();
        let back = network_from_json(&json).unwrap();
        assert_eq!(back, net);
        assert_eq!(network_to_json(&back).unwrap(), json);
    }

    #[test]
    fn network_json_rejects_inconsistent_shapes() {
        let fam = KernelFamily::alpha(ParamRange::new(0.0, 100.0));
        let net = SkimNetwork::new(NetworkParams::new(2, 3, 1, fam)).unwrap();
        let mut doc: serde_json::Value =
            serde_json::from_str(&network_to_json(&net).unwrap()).unwrap();
        doc["num_dendrites"] = serde_json::json!(4);
        assert!(network_from_json(&doc.to_string()).is_err());
    }

    #[test]
    fn float_formatting() {
        assert_eq!(fmt_float(0.0), "0");
        assert_eq!(fmt_float(1.0), "1");
        assert_eq!(fmt_float(-0.5), "-0.5");
        assert_eq!(fmt_float(std::f64::consts::PI), "3.14159265");
        assert_eq!(fmt_float(123456789.4), "123456789");
        assert_eq!(fmt_float(1.0 / 3.0 * 1e-7), "3.33333333e-8");
        assert_eq!(fmt_float(2.5e12), "2.5e12");
        assert_eq!(fmt_float(9.9999999996), "10");
    }

    #[test]
    fn weights_csv_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        save_weights_csv(
            &DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            &path,
        )
        .unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "dendrite_0,dendrite_1,dendrite_2\n1,2,3\n4,5,6\n");
    }

    fn arb_set() -> impl Strategy<Value = LabeledRasterSet> {
        (1usize..6, 1usize..60, 0usize..5).prop_flat_map(|(l, k, n)| {
            let raster = proptest::collection::btree_set((0..l, 0..k), 0..20)
                .prop_map(move |ev| SpikeRaster::new(l, k, ev.into_iter().collect()).unwrap());
            proptest::collection::vec((raster, 0usize..10, 0..k), n).prop_map(move |items| {
                let (mut rs, mut ls, mut ts) = (vec![], vec![], vec![]);
                for (r, c, t) in items {
                    rs.push(r);
                    ls.push(c);
                    ts.push(t);
                }
                LabeledRasterSet::new(l, k, rs, ls, ts).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn raster_set_round_trip(set in arb_set()) {
            let text = format_raster_set(&set);
            let back = parse_raster_set(&text).unwrap();
            prop_assert_eq!(&back, &set);
            prop_assert_eq!(format_raster_set(&back), text);
        }

        #[test]
        fn float_format_keeps_nine_digits(v in -1e12f64..1e12) {
            let parsed: f64 = fmt_float(v).parse().unwrap();
            prop_assert!((parsed - v).abs() <= v.abs() * 1e-8 + 1e-300);
        }
    }
}
