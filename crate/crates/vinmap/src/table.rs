//! Decoding and tokenizing of the delimited text inputs.

use std::borrow::Cow;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}: not valid UTF-8 and Latin-1 fallback is disabled")]
    Encoding(String),
    #[error("{0}: missing header row")]
    NoHeader(String),
    #[error("{file}: missing column `{column}`")]
    MissingColumn { file: String, column: String },
    #[error("{0}: {1}")]
    Csv(String, csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Encoding {
    /// UTF-8, falling back to Latin-1 (Windows-1252) on decode failure.
    #[default]
    Auto,
    Utf8,
    Latin1,
}

/// Field separator: a single byte, or runs of whitespace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delimiter {
    Byte(u8),
    Whitespace,
}

impl Default for Delimiter {
    fn default() -> Self {
        Delimiter::Byte(b';')
    }
}

impl FromStr for Delimiter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "whitespace" => Ok(Delimiter::Whitespace),
            "tab" | "\\t" | "\t" => Ok(Delimiter::Byte(b'\t')),
            _ if s.len() == 1 && s.is_ascii() => Ok(Delimiter::Byte(s.as_bytes()[0])),
            _ => Err(format!(
                "delimiter must be one ASCII character, `tab` or `whitespace`, got {s:?}"
            )),
        }
    }
}

impl fmt::Display for Delimiter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Delimiter::Byte(b'\t') => f.write_str("tab"),
            Delimiter::Byte(b) => write!(f, "{}", *b as char),
            Delimiter::Whitespace => f.write_str("whitespace"),
        }
    }
}

impl Serialize for Delimiter {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Delimiter {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TextFormat {
    pub delimiter: Delimiter,
    pub encoding: Encoding,
}

/// Decodes raw bytes; the flag is true when the Latin-1 fallback was used.
pub fn decode<'a>(
    name: &str,
    bytes: &'a [u8],
    encoding: Encoding,
) -> Result<(Cow<'a, str>, bool), TableError> {
    let bytes = bytes.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(bytes);
    match encoding {
        Encoding::Latin1 => Ok((
            encoding_rs::WINDOWS_1252
                .decode_without_bom_handling(bytes)
                .0,
            false,
        )),
        Encoding::Utf8 => std::str::from_utf8(bytes)
            .map(|s| (Cow::Borrowed(s), false))
            .map_err(|_| TableError::Encoding(name.to_string())),
        Encoding::Auto => match std::str::from_utf8(bytes) {
            Ok(s) => Ok((Cow::Borrowed(s), false)),
            Err(_) => Ok((
                encoding_rs::WINDOWS_1252
                    .decode_without_bom_handling(bytes)
                    .0,
                true,
            )),
        },
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, TableError> {
    std::fs::read(path).map_err(|source| TableError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// A header row and data rows with their 1-based line numbers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub name: String,
    pub headers: Vec<String>,
    pub rows: Vec<(usize, Vec<String>)>,
    pub latin1_fallback: bool,
}

impl Table {
    pub fn parse_bytes(name: &str, bytes: &[u8], format: &TextFormat) -> Result<Self, TableError> {
        let (text, latin1_fallback) = decode(name, bytes, format.encoding)?;
        let mut t = Self::parse_str(name, &text, format.delimiter)?;
        t.latin1_fallback = latin1_fallback;
        Ok(t)
    }

    pub fn read(path: &Path, format: &TextFormat) -> Result<Self, TableError> {
        Self::parse_bytes(&path.display().to_string(), &read_file(path)?, format)
    }

    pub fn parse_str(name: &str, text: &str, delimiter: Delimiter) -> Result<Self, TableError> {
        let mut records: Vec<(usize, Vec<String>)> = match delimiter {
            Delimiter::Whitespace => text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| (i + 1, l.split_whitespace().map(str::to_string).collect()))
                .collect(),
            Delimiter::Byte(b) => {
                let mut reader = csv::ReaderBuilder::new()
                    .delimiter(b)
                    .has_headers(false)
                    .flexible(true)
                    .from_reader(text.as_bytes());
                let mut out = Vec::new();
                for rec in reader.records() {
                    let rec = rec.map_err(|e| TableError::Csv(name.to_string(), e))?;
                    if rec.iter().all(|f| f.trim().is_empty()) {
                        continue;
                    }
                    // the reader does not count skipped blank lines and its
                    // offset points before them, so count line breaks up to
                    // the first byte of the record
                    let line = rec.position().map_or(0, |p| {
                        let bytes = text.as_bytes();
                        let mut start = p.byte() as usize;
                        while matches!(bytes.get(start), Some(b'\n' | b'\r')) {
                            start += 1;
                        }
                        bytes[..start].iter().filter(|&&b| b == b'\n').count() + 1
                    });
                    out.push((line, rec.iter().map(|f| f.trim().to_string()).collect()));
                }
                out
            }
        };
        if records.is_empty() {
            return Err(TableError::NoHeader(name.to_string()));
        }
        let (_, headers) = records.remove(0);
        Ok(Self {
            name: name.to_string(),
            headers,
            rows: records,
            latin1_fallback: false,
        })
    }

    pub fn column(&self, name: &str) -> Result<usize, TableError> {
        self.optional_column(name)
            .ok_or_else(|| TableError::MissingColumn {
                file: self.name.clone(),
                column: name.to_string(),
            })
    }

    pub fn optional_column(&self, name: &str) -> Option<usize> {
        self.headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
    }
}

/// Field `i` of a row, empty when the row is short.
pub fn field(row: &[String], i: usize) -> &str {
    row.get(i).map_or("", String::as_str)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latin1_fallback() {
        let bytes = b"name;v\nC\xF4te;1\n";
        let t = Table::parse_bytes("x", bytes, &TextFormat::default()).unwrap();
        assert!(t.latin1_fallback);
        assert_eq!(t.rows[0].1[0], "Côte");
        assert!(Table::parse_bytes(
            "x",
            bytes,
            &TextFormat {
                encoding: Encoding::Utf8,
                ..TextFormat::default()
            }
        )
        .is_err());
    }

    #[test]
    fn whitespace_rows_keep_line_numbers() {
        let t = Table::parse_str(
            "x",
            "insee appellation weight\n\n01001 3B011 0.33 0\n",
            Delimiter::Whitespace,
        )
        .unwrap();
        assert_eq!(
            t.rows,
            vec![(
                3,
                vec!["01001".into(), "3B011".into(), "0.33".into(), "0".into()]
            )]
        );
    }

    #[test]
    fn semicolon_rows_and_line_numbers() {
        let t = Table::parse_str("x", "a;b\n1;2\n\n3;4\n", Delimiter::Byte(b';')).unwrap();
        assert_eq!(t.rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![2, 4]);
        assert_eq!(t.column("B").unwrap(), 1);
        assert!(t.column("c").is_err());
    }

    #[test]
    fn delimiter_parsing() {
        assert_eq!(
            "whitespace".parse::<Delimiter>().unwrap(),
            Delimiter::Whitespace
        );
        assert_eq!(",".parse::<Delimiter>().unwrap(), Delimiter::Byte(b','));
        assert!("::".parse::<Delimiter>().is_err());
    }
}
