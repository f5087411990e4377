//! Flat `key = value` configuration with `[section]` headers.
//!
//! Keys before the first header belong to the top-level section, written
//! `""` internally. Values are kept as strings and converted on access, so
//! every diagnostic can name the offending `section.key`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

/// Where a value came from, for diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    File { name: String, line: usize },
    CommandLine,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::File { name, line } => write!(f, "{name}:{line}"),
            Origin::CommandLine => write!(f, "command line"),
        }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub type ConfigResult<T> = Result<T, ConfigError>;

fn err<T>(msg: impl Into<String>) -> ConfigResult<T> {
    Err(ConfigError(msg.into()))
}

/// Accepted sections and keys.
pub const SCHEMA: &[(&str, &[&str])] = &[
    ("", &["kind", "seed", "output"]),
    ("integrand", &["type", "p", "q", "mu", "alpha", "nu", "lambda", "m", "weight", "coefficient", "epsilon"]),
    ("grid", &["lower", "upper", "nodes", "tags"]),
    ("problem", &["mode", "forcing", "dirichlet", "neumann"]),
    ("solver", &["epsilon0", "rho", "k_max", "max_iterations", "gradient_tolerance", "armijo", "shrink", "gap_tolerance"]),
    ("besov", &["target", "s", "p_norm", "order", "window_lo", "window_hi", "boundary", "face", "coarsest", "halvings"]),
    ("excess", &["center", "r0", "tau", "steps", "beta"]),
    ("classify", &["epsilon", "m_bound", "r0", "beta", "samples", "lower", "upper"]),
    ("gap", &["competitor"]),
    ("exponents", &["n", "p", "q", "alpha", "beta", "bc", "radial", "autonomous", "g_regularity", "apriori_w1q", "k_max", "format"]),
    ("verify", &["samples"]),
];

fn known(section: &str, key: &str) -> bool {
    SCHEMA.iter().any(|(s, keys)| *s == section && keys.contains(&key))
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    origin: Origin,
}

#[derive(Debug, Clone, Default)]
pub struct Config {
    entries: BTreeMap<(String, String), Entry>,
}

impl Config {
    /// Parses config text. `name` labels diagnostics.
    pub fn parse(text: &str, name: &str) -> ConfigResult<Self> {
        let mut cfg = Config::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let Some(s) = rest.strip_suffix(']') else {
                    return err(format!("{name}:{line_no}: unterminated section header"));
                };
                let s = s.trim();
                if !SCHEMA.iter().any(|(k, _)| *k == s) || s.is_empty() {
                    return err(format!("{name}:{line_no}: unknown section [{s}]"));
                }
                section = s.to_string();
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return err(format!("{name}:{line_no}: expected `key = value`"));
            };
            let (k, v) = (k.trim(), v.trim());
            if !known(&section, k) {
                return err(format!("{name}:{line_no}: unknown key `{}`", dotted(&section, k)));
            }
            let origin = Origin::File { name: name.to_string(), line: line_no };
            if let Some(prev) = cfg.entries.get(&(section.clone(), k.to_string())) {
                return err(format!("{name}:{line_no}: `{}` already set at {}", dotted(&section, k), prev.origin));
            }
            cfg.entries.insert((section.clone(), k.to_string()), Entry { value: v.to_string(), origin });
        }
        Ok(cfg)
    }

    /// Sets or replaces a value from the command line.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> ConfigResult<()> {
        if !known(section, key) {
            return err(format!("command line: unknown key `{}`", dotted(section, key)));
        }
        self.entries.insert((section.into(), key.into()), Entry { value: value.into(), origin: Origin::CommandLine });
        Ok(())
    }

    /// Applies `--section.key value`, `--key value` and `--key=value` overrides.
    /// Bare keys are looked up in `preferred` sections first.
    pub fn apply_overrides(&mut self, args: &[String], preferred: &[&str]) -> ConfigResult<()> {
        let mut i = 0;
        while i < args.len() {
            let Some(flag) = args[i].strip_prefix("--") else {
                return err(format!("command line: unexpected argument `{}`", args[i]));
            };
            let (name, value) = match flag.split_once('=') {
                Some((n, v)) => (n.to_string(), v.to_string()),
                None => {
                    let Some(v) = args.get(i + 1) else {
                        return err(format!("command line: `--{flag}` needs a value"));
                    };
                    i += 1;
                    (flag.to_string(), v.clone())
                }
            };
            i += 1;
            let (section, key) = match name.split_once('.') {
                Some((s, k)) => (s.to_string(), k.to_string()),
                None => {
                    let found = preferred.iter().chain(SCHEMA.iter().map(|(s, _)| s)).find(|s| known(s, &name));
                    match found {
                        Some(s) => (s.to_string(), name.clone()),
                        None => return err(format!("command line: unknown key `{name}`")),
                    }
                }
            };
            self.set(&section, &key, &value)?;
        }
        Ok(())
    }

    pub fn remove(&mut self, section: &str, key: &str) {
        self.entries.remove(&(section.to_string(), key.to_string()));
    }

    pub fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.entries.get(&(section.to_string(), key.to_string())).map(|e| e.value.as_str())
    }

    fn locate(&self, section: &str, key: &str) -> String {
        match self.entries.get(&(section.to_string(), key.to_string())) {
            Some(e) => format!("{} (`{}`)", e.origin, dotted(section, key)),
            None => format!("`{}`", dotted(section, key)),
        }
    }

    pub fn get<T: FromStr>(&self, section: &str, key: &str) -> ConfigResult<Option<T>> {
        match self.raw(section, key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| ConfigError(format!("{}: cannot parse `{v}`", self.locate(section, key)))),
        }
    }

    pub fn get_or<T: FromStr>(&self, section: &str, key: &str, default: T) -> ConfigResult<T> {
        Ok(self.get(section, key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, section: &str, key: &str) -> ConfigResult<T> {
        self.get(section, key)?.ok_or_else(|| ConfigError(format!("missing required field `{}`", dotted(section, key))))
    }

    /// Comma-separated list of numbers.
    pub fn list(&self, section: &str, key: &str) -> ConfigResult<Option<Vec<f64>>> {
        let Some(v) = self.raw(section, key) else { return Ok(None) };
        v.split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
            .map_err(|_| ConfigError(format!("{}: expected a comma-separated list of numbers, got `{v}`", self.locate(section, key))))
    }

    pub fn error(&self, section: &str, key: &str, msg: impl fmt::Display) -> ConfigError {
        ConfigError(format!("{}: {msg}", self.locate(section, key)))
    }

    pub fn fail<T>(&self, section: &str, key: &str, msg: impl fmt::Display) -> ConfigResult<T> {
        Err(self.error(section, key, msg))
    }

    /// Canonical text form: sorted sections and keys.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut current: Option<&str> = None;
        for ((s, k), e) in &self.entries {
            if current != Some(s.as_str()) {
                if !s.is_empty() {
                    if !out.is_empty() {
                        out.push('\n');
                    }
                    out.push_str(&format!("[{s}]\n"));
                }
                current = Some(s);
            }
            out.push_str(&format!("{k} = {}\n", e.value));
        }
        out
    }
}

fn dotted(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_overrides() {
        let mut c = Config::parse("kind = solve\n# comment\n[integrand]\np = 3 # inline\n", "t.cfg").unwrap();
        assert_eq!(c.get::<f64>("integrand", "p").unwrap(), Some(3.0));
        c.apply_overrides(&["--integrand.p".into(), "4".into(), "--k_max=3".into()], &["solver"]).unwrap();
        assert_eq!(c.raw("integrand", "p"), Some("4"));
        assert_eq!(c.raw("solver", "k_max"), Some("3"));
        assert!(c.to_text().starts_with("kind = solve\n\n[integrand]\np = 4\n"));
    }

    #[test]
    fn diagnostics_name_line_and_field() {
        let e = Config::parse("[grid]\nbogus = 1\n", "a.cfg").unwrap_err();
        assert_eq!(e.0, "a.cfg:2: unknown key `grid.bogus`");
        let c = Config::parse("[grid]\nnodes = x\n", "a.cfg").unwrap();
        assert!(c.get::<usize>("grid", "nodes").unwrap_err().0.contains("a.cfg:2"));
        let c = Config::parse("", "e.cfg").unwrap();
        assert_eq!(c.require::<String>("", "kind").unwrap_err().0, "missing required field `kind`");
    }
}
