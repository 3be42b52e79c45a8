//! Flat `key = value` structured text with `[section]` headers; used for
//! corpus manifests, config files and config echoes.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub entries: Vec<(String, String)>,
}

impl Section {
    pub fn new(name: &str) -> Self {
        Section { name: name.to_string(), entries: Vec::new() }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing key '{}' in section [{}]", key, self.name)))
    }

    pub fn parse_as<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse().map_err(|_| {
            Error::Config(format!("key '{}' in [{}]: cannot parse '{}'", key, self.name, raw))
        })
    }
}

pub fn parse(text: &str) -> Result<Vec<Section>> {
    let mut sections: Vec<Section> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            sections.push(Section::new(name.trim()));
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected 'key = value', got '{}'", lineno + 1, line))
        })?;
        let section = sections
            .last_mut()
            .ok_or_else(|| Error::Config(format!("line {}: entry before any [section]", lineno + 1)))?;
        section.set(key.trim(), value.trim());
    }
    Ok(sections)
}

pub fn render(sections: &[Section]) -> String {
    let mut out = String::new();
    for s in sections {
        out.push_str(&format!("[{}]\n", s.name));
        for (k, v) in &s.entries {
            out.push_str(&format!("{} = {}\n", k, v));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut a = Section::new("attack");
        a.set("epsilon", 0.5);
        a.set("name", "uad");
        let text = render(&[a.clone()]);
        let parsed = parse(&text).unwrap();
        assert_eq!(parsed, vec![a]);
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let s = parse("# header\n\n[x]\n# inner\nk = v\n").unwrap();
        assert_eq!(s[0].get("k"), Some("v"));
    }

    #[test]
    fn entry_before_section_is_an_error() {
        assert!(parse("k = v\n").is_err());
        assert!(parse("[x]\nbroken-line\n").is_err());
    }
}
