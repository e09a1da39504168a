//! Flat `key = value` configuration with `#` comments and dotted keys.
//!
//! A [`Schema`] lists every accepted key with its type, default, and help text.
//! Validation and `--help` output are both generated from it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key {key:?}")]
    Duplicate { line: usize, key: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("key {key:?}: {message}")]
    BadValue { key: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Int,
    Float,
    Bool,
    Str,
    IntList,
    FloatList,
    StrList,
    /// Integers or `none`.
    OptIntList,
    /// Two integers `lo,hi` with `lo ≤ hi`.
    IntRange,
    /// Two reals `lo,hi` with `lo ≤ hi`.
    FloatRange,
    /// A real or `none`.
    OptFloat,
}

impl Kind {
    fn describe(self) -> &'static str {
        match self {
            Kind::Int => "integer",
            Kind::Float => "real",
            Kind::Bool => "true|false",
            Kind::Str => "string",
            Kind::IntList => "integer list",
            Kind::FloatList => "real list",
            Kind::StrList => "string list",
            Kind::OptIntList => "list of integer|none",
            Kind::IntRange => "integer range lo,hi",
            Kind::FloatRange => "real range lo,hi",
            Kind::OptFloat => "real|none",
        }
    }

    fn check(self, value: &str) -> Result<(), String> {
        fn all<T: FromStr>(v: &str) -> Result<Vec<T>, String> {
            split_list(v)
                .iter()
                .map(|s| s.parse::<T>().map_err(|_| format!("cannot parse {s:?}")))
                .collect()
        }
        fn range<T: FromStr + PartialOrd>(v: &str) -> Result<(), String> {
            let parts: Vec<T> = all(v)?;
            match parts.as_slice() {
                [lo, hi] if lo <= hi => Ok(()),
                [_, _] => Err("range must satisfy lo ≤ hi".into()),
                _ => Err("range needs exactly two values".into()),
            }
        }
        match self {
            Kind::Int => value.parse::<i64>().map(|_| ()).map_err(|e| e.to_string()),
            Kind::Float => value.parse::<f64>().map(|_| ()).map_err(|e| e.to_string()),
            Kind::Bool => parse_bool(value).map(|_| ()),
            Kind::Str => Ok(()),
            Kind::IntList => all::<i64>(value).map(|_| ()),
            Kind::FloatList => all::<f64>(value).map(|_| ()),
            Kind::StrList => Ok(()),
            Kind::OptIntList => split_list(value)
                .iter()
                .try_for_each(|s| if s == "none" { Ok(()) } else { s.parse::<i64>().map(|_| ()).map_err(|e| e.to_string()) }),
            Kind::IntRange => range::<i64>(value),
            Kind::FloatRange => range::<f64>(value),
            Kind::OptFloat if value == "none" => Ok(()),
            Kind::OptFloat => value.parse::<f64>().map(|_| ()).map_err(|e| e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KeyDef {
    pub key: &'static str,
    pub kind: Kind,
    /// Empty means "no default; optional".
    pub default: &'static str,
    pub help: &'static str,
}

/// Fixed keys plus keys of the form `<prefix><name>.<field>` for dynamic
/// sections (for example `city.pune.n_with_pv`).
#[derive(Debug, Clone, Copy)]
pub struct Schema {
    pub keys: &'static [KeyDef],
    pub sections: &'static [(&'static str, &'static [KeyDef])],
}

impl Schema {
    pub fn lookup(&self, key: &str) -> Option<&KeyDef> {
        if let Some(k) = self.keys.iter().find(|k| k.key == key) {
            return Some(k);
        }
        for (prefix, fields) in self.sections {
            if let Some(rest) = key.strip_prefix(prefix)
                && let Some((name, field)) = rest.split_once('.')
                && !name.is_empty()
            {
                return fields.iter().find(|k| k.key == field);
            }
        }
        None
    }

    /// Help text listing every key, its type, and its default.
    pub fn help(&self) -> String {
        let mut out = String::new();
        let line = |out: &mut String, key: &str, k: &KeyDef| {
            let default = if k.default.is_empty() { "-".to_string() } else { k.default.to_string() };
            let _ = writeln!(out, "  {key:<28} {:<22} [default: {default}]  {}", k.kind.describe(), k.help);
        };
        for k in self.keys {
            line(&mut out, k.key, k);
        }
        for (prefix, fields) in self.sections {
            for k in *fields {
                line(&mut out, &format!("{prefix}<name>.{}", k.key), k);
            }
        }
        out
    }
}

pub fn split_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        o => Err(format!("expected true or false, got {o:?}")),
    }
}

/// Ordered key → raw value map.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let k = k.trim();
            if k.is_empty() || k.contains(char::is_whitespace) {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            if values.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(ConfigError::Duplicate {
                    line: i + 1,
                    key: k.to_string(),
                });
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Schema defaults for every fixed key that has one.
    pub fn defaults(schema: &Schema) -> Self {
        Self {
            values: schema
                .keys
                .iter()
                .filter(|k| !k.default.is_empty())
                .map(|k| (k.key.to_string(), k.default.to_string()))
                .collect(),
        }
    }

    /// Later layers win.
    pub fn merge(&mut self, other: &Config) {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), v.clone());
        }
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.values.insert(key.to_string(), value.trim().to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn validate(&self, schema: &Schema) -> Result<(), ConfigError> {
        for (k, v) in &self.values {
            let def = schema.lookup(k).ok_or_else(|| ConfigError::UnknownKey(k.clone()))?;
            def.kind.check(v).map_err(|message| ConfigError::BadValue { key: k.clone(), message })?;
        }
        Ok(())
    }

    fn raw(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key).ok_or_else(|| ConfigError::BadValue {
            key: key.into(),
            message: "missing".into(),
        })
    }

    fn bad(key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::BadValue {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        let v = self.raw(key)?;
        v.parse().map_err(|_| Self::bad(key, format!("cannot parse {v:?}")))
    }

    pub fn bool(&self, key: &str) -> Result<bool, ConfigError> {
        parse_bool(self.raw(key)?).map_err(|m| Self::bad(key, m))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, ConfigError> {
        split_list(self.raw(key)?)
            .iter()
            .map(|s| s.parse().map_err(|_| Self::bad(key, format!("cannot parse {s:?}"))))
            .collect()
    }

    pub fn opt_list<T: FromStr>(&self, key: &str) -> Result<Vec<Option<T>>, ConfigError> {
        split_list(self.raw(key)?)
            .iter()
            .map(|s| {
                if s == "none" {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| Self::bad(key, format!("cannot parse {s:?}")))
                }
            })
            .collect()
    }

    pub fn range<T: FromStr + PartialOrd + Copy>(&self, key: &str) -> Result<(T, T), ConfigError> {
        match self.list::<T>(key)?.as_slice() {
            [lo, hi] if lo <= hi => Ok((*lo, *hi)),
            _ => Err(Self::bad(key, "expected lo,hi with lo ≤ hi")),
        }
    }

    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.get(key) {
            None | Some("") | Some("none") => Ok(None),
            Some(_) => self.parsed(key).map(Some),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIELDS: &[KeyDef] = &[KeyDef {
        key: "n",
        kind: Kind::Int,
        default: "1",
        help: "count",
    }];
    const SCHEMA: Schema = Schema {
        keys: &[
            KeyDef {
                key: "grid.sizes",
                kind: Kind::IntList,
                default: "64,96",
                help: "tile sizes",
            },
            KeyDef {
                key: "flag",
                kind: Kind::Bool,
                default: "true",
                help: "a switch",
            },
            KeyDef {
                key: "depth",
                kind: Kind::OptIntList,
                default: "none,10",
                help: "depths",
            },
        ],
        sections: &[("city.", FIELDS)],
    };

    #[test]
    fn parses_comments_and_dotted_keys() {
        let c = Config::parse("# header\ngrid.sizes = 64, 96 ,128  # trailing\n\nflag=false\ncity.a.n = 3\n").unwrap();
        assert_eq!(c.list::<usize>("grid.sizes").unwrap(), vec![64, 96, 128]);
        assert!(!c.bool("flag").unwrap());
        assert_eq!(c.parsed::<usize>("city.a.n").unwrap(), 3);
        c.validate(&SCHEMA).unwrap();
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(Config::parse("novalue\n"), Err(ConfigError::Syntax { line: 1 }));
        assert!(matches!(Config::parse("a=1\na=2"), Err(ConfigError::Duplicate { line: 2, .. })));
        let c = Config::parse("frobnicate = 1").unwrap();
        assert_eq!(c.validate(&SCHEMA), Err(ConfigError::UnknownKey("frobnicate".into())));
        let c = Config::parse("grid.sizes = 64,x").unwrap();
        assert!(matches!(c.validate(&SCHEMA), Err(ConfigError::BadValue { .. })));
        let c = Config::parse("city..n = 1").unwrap();
        assert!(c.validate(&SCHEMA).is_err());
    }

    #[test]
    fn layering_and_optional_lists() {
        let mut c = Config::defaults(&SCHEMA);
        c.merge(&Config::parse("grid.sizes = 32").unwrap());
        c.set("flag", "no");
        assert_eq!(c.list::<usize>("grid.sizes").unwrap(), vec![32]);
        assert!(!c.bool("flag").unwrap());
        assert_eq!(c.opt_list::<usize>("depth").unwrap(), vec![None, Some(10)]);
    }

    #[test]
    fn help_lists_every_key() {
        let h = SCHEMA.help();
        for k in ["grid.sizes", "flag", "depth", "city.<name>.n"] {
            assert!(h.contains(k), "{k}");
        }
    }
}
