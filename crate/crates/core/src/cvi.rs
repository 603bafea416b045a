//! Vineyard-register product codes.
//!
//! A register code concatenates the kind of geographical area, the color, the
//! area id, the kind of wine and a trailing numeric product code
//! (`1B001M01`). Records are aggregated at the level of the code without that
//! numeric tail (`1B001M`).

use alloc::string::{String, ToString};

use crate::model::{Category, Color, ModelError};

/// How the appellation-level prefix is cut from a raw code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TruncationRule {
    /// Longest leading substring ending in a letter. Codes without any letter
    /// are kept whole.
    #[default]
    TrailingLetter,
    /// First `n` characters (the whole code when shorter).
    FixedLength(usize),
    /// Code used as-is.
    Keep,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CviCode {
    raw: String,
    prefix_len: usize,
}

impl CviCode {
    pub fn parse(raw: &str, rule: TruncationRule) -> Result<Self, ModelError> {
        let raw = raw.trim();
        if raw.is_empty() {
            return Err(ModelError::EmptyCode);
        }
        let prefix_len = match rule {
            TruncationRule::Keep => raw.len(),
            TruncationRule::FixedLength(n) => {
                // snap to a char boundary at or below n
                let mut n = n.min(raw.len());
                while n > 0 && !raw.is_char_boundary(n) {
                    n -= 1;
                }
                n
            }
            TruncationRule::TrailingLetter => raw
                .char_indices()
                .rfind(|(_, ch)| ch.is_alphabetic())
                .map(|(i, ch)| i + ch.len_utf8())
                .unwrap_or(raw.len()),
        };
        if prefix_len == 0 {
            return Err(ModelError::EmptyCode);
        }
        Ok(Self {
            raw: raw.to_string(),
            prefix_len,
        })
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn prefix(&self) -> &str {
        &self.raw[..self.prefix_len]
    }

    pub fn product_suffix(&self) -> Option<&str> {
        let tail = &self.raw[self.prefix_len..];
        (!tail.is_empty()).then_some(tail)
    }
}

/// Category from the leading area-type digit: `1` AOP, `2` AOP brandy,
/// `3` PGI, `4` non-PGI.
pub fn infer_category(code: &str) -> Option<Category> {
    match code.as_bytes().first()? {
        b'1' => Some(Category::Aop),
        b'2' => Some(Category::AopBrandy),
        b'3' => Some(Category::Pgi),
        b'4' => Some(Category::NonPgi),
        _ => None,
    }
}

/// Color from the second character: `B` white, `R` red, `S` rosé.
pub fn infer_color(code: &str) -> Color {
    match code.as_bytes().get(1) {
        Some(b'B') => Color::White,
        Some(b'R') => Color::Red,
        Some(b'S') => Color::Rose,
        _ => Color::Unknown,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn trailing_letter_rule() {
        let c = CviCode::parse("1B001M01", TruncationRule::TrailingLetter).unwrap();
        assert_eq!(c.prefix(), "1B001M");
        assert_eq!(c.product_suffix(), Some("01"));

        let c = CviCode::parse("1B001M", TruncationRule::TrailingLetter).unwrap();
        assert_eq!(c.prefix(), "1B001M");
        assert_eq!(c.product_suffix(), None);

        let c = CviCode::parse("12345", TruncationRule::TrailingLetter).unwrap();
        assert_eq!(c.prefix(), "12345");
    }

    #[test]
    fn fixed_length_override() {
        let c = CviCode::parse("3B01101", TruncationRule::FixedLength(5)).unwrap();
        assert_eq!(c.prefix(), "3B011");
        assert_eq!(c.product_suffix(), Some("01"));
        let c = CviCode::parse("3B0", TruncationRule::FixedLength(5)).unwrap();
        assert_eq!(c.prefix(), "3B0");
        assert!(CviCode::parse("3B0", TruncationRule::FixedLength(0)).is_err());
    }

    #[test]
    fn empty_code_rejected() {
        assert!(CviCode::parse("  ", TruncationRule::Keep).is_err());
    }

    #[test]
    fn inference_from_code() {
        assert_eq!(infer_category("1B001M"), Some(Category::Aop));
        assert_eq!(infer_category("3B011"), Some(Category::Pgi));
        assert_eq!(infer_category("X"), None);
        assert_eq!(infer_color("1R001S"), Color::Red);
        assert_eq!(infer_color("1S001M"), Color::Rose);
        assert_eq!(infer_color("1"), Color::Unknown);
    }

    proptest! {
        #[test]
        fn prefix_is_nonempty_leading_substring(raw in "[0-9A-Z]{1,10}") {
            for rule in [TruncationRule::TrailingLetter, TruncationRule::FixedLength(6), TruncationRule::Keep] {
                let a = CviCode::parse(&raw, rule).unwrap();
                let b = CviCode::parse(&raw, rule).unwrap();
                prop_assert!(!a.prefix().is_empty());
                prop_assert!(raw.starts_with(a.prefix()));
                prop_assert_eq!(a.prefix(), b.prefix());
            }
        }
    }
}
