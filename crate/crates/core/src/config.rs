//! Experiment configuration: flat INI sections of `key = value` lines.
//!
//! Parsing reports the offending line. [`ExperimentConfig::emit`] writes a
//! canonical form (fixed key order, round-trip float formatting), so
//! `parse(emit(parse(s))) == parse(s)` and the config hash is the SHA-256 of
//! the canonical text.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::green::VortexConfig;
use crate::torus::{Point, TorusDomain};

#[derive(Clone, Debug, PartialEq)]
pub struct DomainSection {
    pub periods: [f64; 2],
    pub n: usize,
    pub offset: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct VorticesSection {
    pub points: Vec<Point>,
    pub multiplicities: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BubblesSection {
    pub k: usize,
    pub seed: Vec<Point>,
    /// `None` selects the default `d`.
    pub d: Option<f64>,
    pub alpha: f64,
    /// Fixed μ for the `ansatz` command; otherwise `β/√ε`.
    pub mu: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSection {
    /// Strictly decreasing.
    pub eps: Vec<f64>,
    pub beta0: f64,
    pub beta1: f64,
    pub beta_hint: Option<f64>,
    /// Negative test of the reduced system.
    pub flip_d_term: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TolerancesSection {
    pub newton_tol: f64,
    pub tol_reduced: f64,
    pub quadrature_order: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputsSection {
    pub directory: String,
    pub formats: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub domain: DomainSection,
    pub vortices: VorticesSection,
    pub bubbles: BubblesSection,
    pub sweep: SweepSection,
    pub tolerances: TolerancesSection,
    pub outputs: OutputsSection,
}

struct Entry {
    line: usize,
    value: String,
}

type Sections = BTreeMap<String, (usize, BTreeMap<String, Entry>)>;

const KEYS: &[(&str, &[&str])] = &[
    ("domain", &["periods", "n", "offset"]),
    ("vortices", &["points", "multiplicities"]),
    ("bubbles", &["k", "seed", "d", "alpha", "mu"]),
    ("sweep", &["eps", "eps_range", "count", "beta0", "beta1", "beta_hint", "flip_d_term"]),
    ("tolerances", &["newton_tol", "tol_reduced", "quadrature_order"]),
    ("outputs", &["directory", "formats"]),
];

fn err(line: usize, message: impl Into<String>) -> Error {
    Error::Config { line, message: message.into() }
}

fn tokenize(text: &str) -> Result<Sections> {
    let mut sections: Sections = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        // ';' also separates points, so it only starts a comment at line start
        let s = if raw.trim_start().starts_with(';') { "" } else { raw.split('#').next().unwrap_or("").trim() };
        if s.is_empty() {
            continue;
        }
        if let Some(name) = s.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| err(line, "unterminated section header"))?.trim();
            if !KEYS.iter().any(|(sec, _)| *sec == name) {
                return Err(err(line, format!("unknown section [{name}]")));
            }
            if sections.contains_key(name) {
                return Err(err(line, format!("section [{name}] appears twice")));
            }
            sections.insert(name.to_string(), (line, BTreeMap::new()));
            current = Some(name.to_string());
            continue;
        }
        let sec = current.as_ref().ok_or_else(|| err(line, "key outside of any section"))?;
        let (key, value) = s.split_once('=').ok_or_else(|| err(line, format!("expected `key = value`, got `{s}`")))?;
        let key = key.trim();
        let allowed = KEYS.iter().find(|(name, _)| name == sec).map(|(_, k)| *k).unwrap_or(&[]);
        if !allowed.contains(&key) {
            return Err(err(line, format!("unknown key `{key}` in [{sec}]")));
        }
        let table = &mut sections.get_mut(sec).unwrap().1;
        if table.contains_key(key) {
            return Err(err(line, format!("duplicate key `{key}` in [{sec}]")));
        }
        table.insert(key.to_string(), Entry { line, value: value.trim().to_string() });
    }
    Ok(sections)
}

struct Reader<'a> {
    sections: &'a Sections,
}

impl Reader<'_> {
    fn section_line(&self, sec: &str) -> usize {
        self.sections.get(sec).map_or(0, |s| s.0)
    }

    fn get(&self, sec: &str, key: &str) -> Option<&Entry> {
        self.sections.get(sec).and_then(|s| s.1.get(key))
    }

    fn require(&self, sec: &str, key: &str) -> Result<&Entry> {
        self.get(sec, key).ok_or_else(|| err(self.section_line(sec), format!("missing required key `{key}` in [{sec}]")))
    }

    fn float(&self, sec: &str, key: &str) -> Result<Option<f64>> {
        self.get(sec, key).map(|e| parse_float(e, key)).transpose()
    }

    fn float_or(&self, sec: &str, key: &str, default: f64) -> Result<f64> {
        Ok(self.float(sec, key)?.unwrap_or(default))
    }
}

fn parse_float(e: &Entry, key: &str) -> Result<f64> {
    let v: f64 = e.value.parse().map_err(|_| err(e.line, format!("`{key}`: `{}` is not a number", e.value)))?;
    if !v.is_finite() {
        return Err(err(e.line, format!("`{key}` must be finite")));
    }
    Ok(v)
}

fn parse_floats(e: &Entry, key: &str) -> Result<Vec<f64>> {
    e.value
        .split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(e.line, format!("`{key}`: `{t}` is not a finite number")))
        })
        .collect()
}

fn parse_pair(e: &Entry, key: &str) -> Result<[f64; 2]> {
    let v = parse_floats(e, key)?;
    if v.len() != 2 {
        return Err(err(e.line, format!("`{key}` needs two comma-separated numbers")));
    }
    Ok([v[0], v[1]])
}

/// `x y; x y; ...`
fn parse_points(e: &Entry, key: &str) -> Result<Vec<Point>> {
    e.value
        .split(';')
        .map(|p| {
            let c: Vec<&str> = p.split_whitespace().collect();
            if c.len() != 2 {
                return Err(err(e.line, format!("`{key}`: point `{}` needs two coordinates", p.trim())));
            }
            let mut out = [0.0; 2];
            for (o, t) in out.iter_mut().zip(&c) {
                *o = t.parse().map_err(|_| err(e.line, format!("`{key}`: `{t}` is not a number")))?;
            }
            Ok(out)
        })
        .collect()
}

fn parse_usize(e: &Entry, key: &str) -> Result<usize> {
    e.value.parse().map_err(|_| err(e.line, format!("`{key}`: `{}` is not a non-negative integer", e.value)))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let sections = tokenize(text)?;
        let r = Reader { sections: &sections };

        let domain = DomainSection {
            periods: match r.get("domain", "periods") {
                Some(e) => parse_pair(e, "periods")?,
                None => [1.0, 1.0],
            },
            n: parse_usize(r.require("domain", "n")?, "n")?,
            offset: match r.get("domain", "offset") {
                Some(e) => parse_pair(e, "offset")?,
                None => [0.5, 0.5],
            },
        };

        let pts_entry = r.require("vortices", "points")?;
        let points = parse_points(pts_entry, "points")?;
        let multiplicities = match r.get("vortices", "multiplicities") {
            Some(e) => {
                let m = e
                    .value
                    .split(',')
                    .map(|t| t.trim().parse::<u32>().map_err(|_| err(e.line, format!("`multiplicities`: `{}` is not a positive integer", t.trim()))))
                    .collect::<Result<Vec<u32>>>()?;
                if m.len() != points.len() {
                    return Err(err(e.line, format!("{} multiplicities for {} points", m.len(), points.len())));
                }
                m
            }
            None => vec![1; points.len()],
        };

        let k_entry = r.require("bubbles", "k")?;
        let k = parse_usize(k_entry, "k")?;
        let total: u32 = multiplicities.iter().sum();
        if k == 0 || total as usize != 2 * k {
            return Err(err(k_entry.line, format!("N = {total} vortices but k = {k} bubbles; N = 2k is required")));
        }
        let seed_entry = r.require("bubbles", "seed")?;
        let seed = parse_points(seed_entry, "seed")?;
        if seed.len() != k {
            return Err(err(seed_entry.line, format!("{} seed points for k = {k}", seed.len())));
        }
        let d = match r.get("bubbles", "d") {
            Some(e) if e.value == "auto" => None,
            Some(e) => Some(parse_float(e, "d")?),
            None => None,
        };
        let alpha = r.float_or("bubbles", "alpha", 0.4)?;
        if !(alpha > 0.0 && alpha < 0.5) {
            return Err(err(r.get("bubbles", "alpha").map_or(0, |e| e.line), "`alpha` must lie in (0, 1/2)"));
        }
        let mu = r.float("bubbles", "mu")?;
        let bubbles = BubblesSection { k, seed, d, alpha, mu };

        let eps = match (r.get("sweep", "eps"), r.get("sweep", "eps_range")) {
            (Some(e), None) => {
                if r.get("sweep", "count").is_some() {
                    return Err(err(e.line, "`count` only goes with `eps_range`"));
                }
                parse_floats(e, "eps")?
            }
            (None, Some(e)) => {
                let [hi, lo] = parse_pair(e, "eps_range")?;
                let c = r.require("sweep", "count")?;
                let count = parse_usize(c, "count")?;
                if count < 2 || !(hi > lo && lo > 0.0) {
                    return Err(err(e.line, "`eps_range = hi, lo` needs hi > lo > 0 and count >= 2"));
                }
                (0..count).map(|i| hi * (lo / hi).powf(i as f64 / (count - 1) as f64)).collect()
            }
            (Some(e), Some(_)) => return Err(err(e.line, "give either `eps` or `eps_range`, not both")),
            (None, None) => return Err(err(r.section_line("sweep"), "missing `eps` or `eps_range` in [sweep]")),
        };
        let eps_line = r.get("sweep", "eps").or(r.get("sweep", "eps_range")).map_or(0, |e| e.line);
        if eps.iter().any(|&e| !(e > 0.0)) || eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(err(eps_line, "eps values must be positive and strictly decreasing"));
        }
        let beta0 = r.float_or("sweep", "beta0", 0.2)?;
        let beta1 = r.float_or("sweep", "beta1", 5.0)?;
        if !(beta0 > 0.0 && beta1 > beta0) {
            return Err(err(r.section_line("sweep"), "need 0 < beta0 < beta1"));
        }
        let beta_hint = r.float("sweep", "beta_hint")?;
        let flip_d_term = match r.get("sweep", "flip_d_term") {
            Some(e) => e.value.parse::<bool>().map_err(|_| err(e.line, "`flip_d_term` must be true or false"))?,
            None => false,
        };
        let sweep = SweepSection { eps, beta0, beta1, beta_hint, flip_d_term };

        let tolerances = TolerancesSection {
            newton_tol: r.float_or("tolerances", "newton_tol", 1e-10)?,
            tol_reduced: r.float_or("tolerances", "tol_reduced", 1e-8)?,
            quadrature_order: match r.get("tolerances", "quadrature_order") {
                Some(e) => parse_usize(e, "quadrature_order")?,
                None => 20,
            },
        };
        if !(tolerances.newton_tol > 0.0 && tolerances.tol_reduced > 0.0 && tolerances.quadrature_order >= 2) {
            return Err(err(r.section_line("tolerances"), "tolerances must be positive, quadrature_order >= 2"));
        }

        let outputs = OutputsSection {
            directory: r.get("outputs", "directory").map_or_else(|| "out".to_string(), |e| e.value.clone()),
            formats: r
                .get("outputs", "formats")
                .map_or_else(|| vec!["csv".to_string()], |e| e.value.split(',').map(|s| s.trim().to_string()).collect()),
        };

        let cfg = ExperimentConfig { domain, vortices: VorticesSection { points, multiplicities }, bubbles, sweep, tolerances, outputs };
        // domain-level checks, reported against the section that carries them
        cfg.torus().map_err(|e| err(r.section_line("domain"), e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| err(0, format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Canonical text form.
    pub fn emit(&self) -> String {
        let pair = |p: [f64; 2]| format!("{:?}, {:?}", p[0], p[1]);
        let pts = |v: &[Point]| v.iter().map(|p| format!("{:?} {:?}", p[0], p[1])).collect::<Vec<_>>().join("; ");
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        let d = &self.domain;
        let _ = writeln!(s, "[domain]\nperiods = {}\nn = {}\noffset = {}\n", pair(d.periods), d.n, pair(d.offset));
        let v = &self.vortices;
        let mult = v.multiplicities.iter().map(u32::to_string).collect::<Vec<_>>().join(", ");
        let _ = writeln!(s, "[vortices]\npoints = {}\nmultiplicities = {mult}\n", pts(&v.points));
        let b = &self.bubbles;
        let _ = writeln!(s, "[bubbles]\nk = {}\nseed = {}", b.k, pts(&b.seed));
        let _ = writeln!(s, "d = {}", b.d.map_or("auto".to_string(), |x| format!("{x:?}")));
        let _ = writeln!(s, "alpha = {:?}", b.alpha);
        if let Some(mu) = b.mu {
            let _ = writeln!(s, "mu = {mu:?}");
        }
        let w = &self.sweep;
        let _ = writeln!(s, "\n[sweep]\neps = {}\nbeta0 = {:?}\nbeta1 = {:?}", list(&w.eps), w.beta0, w.beta1);
        if let Some(h) = w.beta_hint {
            let _ = writeln!(s, "beta_hint = {h:?}");
        }
        let _ = writeln!(s, "flip_d_term = {}", w.flip_d_term);
        let t = &self.tolerances;
        let _ = writeln!(
            s,
            "\n[tolerances]\nnewton_tol = {:?}\ntol_reduced = {:?}\nquadrature_order = {}",
            t.newton_tol, t.tol_reduced, t.quadrature_order
        );
        let o = &self.outputs;
        let _ = writeln!(s, "\n[outputs]\ndirectory = {}\nformats = {}", o.directory, o.formats.join(", "));
        s
    }

    /// SHA-256 of the canonical form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.emit().as_bytes()))
    }

    pub fn torus(&self) -> Result<TorusDomain> {
        let d = &self.domain;
        TorusDomain::new(d.periods[0], d.periods[1], d.n, d.offset)
    }

    pub fn vortex_config(&self, domain: &TorusDomain) -> Result<VortexConfig> {
        VortexConfig::new(domain, self.vortices.points.clone(), self.vortices.multiplicities.clone())
    }

    pub fn with_grid_n(mut self, n: usize) -> Self {
        self.domain.n = n;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = "\
# two-bubble fixture
[domain]
n = 64

[vortices]
points = 0.25 0.25; 0.75 0.25; 0.25 0.75; 0.75 0.75

[bubbles]
k = 2
seed = 0.5 0.0; 0.5 0.5
d = 0.0225

[sweep]
eps_range = 0.01, 0.001
count = 3
";

    #[test]
    fn parse_sample() {
        let c = ExperimentConfig::parse(SAMPLE).unwrap();
        assert_eq!(c.domain.periods, [1.0, 1.0]);
        assert_eq!(c.vortices.multiplicities, vec![1; 4]);
        assert_eq!(c.sweep.eps.len(), 3);
        assert!((c.sweep.eps[1] - 0.01f64.sqrt() * 0.001f64.sqrt()).abs() < 1e-15);
        assert_eq!(c.bubbles.d, Some(0.0225));
        assert_eq!(c.tolerances.newton_tol, 1e-10);
    }

    #[test]
    fn round_trip() {
        let c = ExperimentConfig::parse(SAMPLE).unwrap();
        let again = ExperimentConfig::parse(&c.emit()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.emit(), again.emit());
        assert_eq!(c.hash(), again.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn diagnostics_carry_lines() {
        let bad = SAMPLE.replace("k = 2", "k = 3");
        match ExperimentConfig::parse(&bad) {
            Err(Error::Config { line, message }) => {
                assert_eq!(line, 9);
                assert!(message.contains("N = 2k"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let bad = SAMPLE.replace("n = 64", "n = sixty");
        assert!(matches!(ExperimentConfig::parse(&bad), Err(Error::Config { line: 3, .. })));
        let bad = SAMPLE.replace("count = 3", "count = 3\ncolour = red");
        assert!(matches!(ExperimentConfig::parse(&bad), Err(Error::Config { line: 16, .. })));
        let bad = SAMPLE.replace("eps_range = 0.01, 0.001\ncount = 3", "eps = 0.01, 0.02");
        assert!(matches!(ExperimentConfig::parse(&bad), Err(Error::Config { line: 14, .. })));
        let bad = SAMPLE.replace("[domain]\nn = 64", "[domain]");
        assert!(matches!(ExperimentConfig::parse(&bad), Err(Error::Config { line: 2, .. })));
    }
}
