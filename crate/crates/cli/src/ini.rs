//! Minimal INI reader: `[section]` headers, `key = value` lines, `#` or
//! `;` comment lines, and trailing comments introduced by whitespace
//! followed by `#` or `;`. Keys before the first header are an error, as are
//! repeated sections and repeated keys.

use std::collections::BTreeMap;

use crate::ConfigError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub value: String,
    pub line: usize,
}

fn strip_comment(line: &str) -> &str {
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if (b == b'#' || b == b';') && (i == 0 || bytes[i - 1].is_ascii_whitespace()) {
            return &line[..i];
        }
    }
    line
}

/// Parsed document: section name -> key -> entry.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Document {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

impl Document {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut doc = Document::default();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = strip_comment(raw).trim();
            if s.is_empty() || s.starts_with('#') || s.starts_with(';') {
                continue;
            }
            if let Some(rest) = s.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::at(line, "unterminated section header"))?
                    .trim()
                    .to_ascii_lowercase();
                if name.is_empty() {
                    return Err(ConfigError::at(line, "empty section name"));
                }
                if doc.sections.insert(name.clone(), BTreeMap::new()).is_some() {
                    return Err(ConfigError::at(line, format!("section [{name}] appears twice")));
                }
                current = Some(name);
                continue;
            }
            let (key, value) = s
                .split_once('=')
                .ok_or_else(|| ConfigError::at(line, format!("expected `key = value`, got `{s}`")))?;
            let key = key.trim().to_ascii_lowercase();
            if key.is_empty() {
                return Err(ConfigError::at(line, "empty key"));
            }
            let section = current
                .as_ref()
                .ok_or_else(|| ConfigError::at(line, format!("`{key}` appears before any [section]")))?;
            let entries = doc.sections.get_mut(section).expect("inserted at header");
            let entry = Entry {
                value: value.trim().to_string(),
                line,
            };
            if entries.insert(key.clone(), entry).is_some() {
                return Err(ConfigError::at(line, format!("[{section}] {key} set twice")));
            }
        }
        Ok(doc)
    }

    pub fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.keys().map(String::as_str)
    }

    /// Remove and return a section; absent sections come back empty.
    pub fn take(&mut self, section: &str) -> Section {
        Section {
            name: section.to_string(),
            entries: self.sections.remove(section).unwrap_or_default(),
        }
    }
}

/// Entries of one section, consumed key by key so that leftovers can be
/// reported as unknown.
#[derive(Debug)]
pub struct Section {
    name: String,
    entries: BTreeMap<String, Entry>,
}

impl Section {
    pub fn take_str(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.remove(key).map(|e| (e.value, e.line))
    }

    pub fn take<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse()
                .map(Some)
                .map_err(|err| ConfigError::at(e.line, format!("[{}] {key} = `{}`: {err}", self.name, e.value))),
        }
    }

    pub fn take_or<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn take_list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let Some((raw, line)) = self.take_str(key) else {
            return Ok(None);
        };
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| ConfigError::at(line, format!("[{}] {key}: `{s}`: {e}", self.name)))
            })
            .collect::<Result<Vec<T>, _>>()
            .map(Some)
    }

    /// Fail on any key nobody consumed.
    pub fn finish(self) -> Result<(), ConfigError> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((key, e)) => Err(ConfigError::at(
                e.line,
                format!("unknown key `{key}` in [{}]", self.name),
            )),
        }
    }
}
