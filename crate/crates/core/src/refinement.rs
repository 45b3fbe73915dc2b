//! Reduces raw text detections to one meter reading, guided by the customer's
//! last confirmed (or initial) reading.
//!
//! Pipeline: strip each token to its integer digits, keep tokens with exactly the
//! register length, keep values inside `[last, last + max_delta]`, pick the smallest
//! advance (then higher confidence, then topmost/leftmost). No survivor means the
//! last reading is returned with `fallback = true`.

use crate::ocr::{BBox, TextDetection};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

pub const DEFAULT_MAX_DELTA: u64 = 10_000;
pub const MAX_REGISTER_LENGTH: usize = 12;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ContextError {
    #[error("last reading must be 1 to 12 digits, got `{0}`")]
    BadReading(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeterContext {
    last_reading: String,
    max_delta: u64,
}

impl MeterContext {
    pub fn new(last_reading: impl Into<String>, max_delta: u64) -> Result<Self, ContextError> {
        let last_reading = last_reading.into();
        if !is_register_value(&last_reading) {
            return Err(ContextError::BadReading(last_reading));
        }
        Ok(Self { last_reading, max_delta })
    }

    pub fn last_reading(&self) -> &str {
        &self.last_reading
    }

    pub fn register_length(&self) -> usize {
        self.last_reading.len()
    }

    pub fn max_delta(&self) -> u64 {
        self.max_delta
    }

    pub fn last_value(&self) -> u64 {
        self.last_reading.parse().expect("validated digits")
    }
}

/// True for 1 to 12 ASCII digits.
pub fn is_register_value(s: &str) -> bool {
    (1..=MAX_REGISTER_LENGTH).contains(&s.len()) && s.bytes().all(|b| b.is_ascii_digit())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedToken {
    pub digits: String,
    pub confidence: f64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub token: String,
    /// `value - last`, may be negative; absent when the token is not register length.
    pub delta: Option<i64>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementResult {
    pub reading: String,
    pub fallback: bool,
    pub candidates: Vec<Candidate>,
}

/// Integer digits of one raw token: anything from the first decimal separator on is
/// discarded, then every non-digit character.
pub fn token_digits(text: &str) -> String {
    let integer_part = text.split(['.', ',']).next().unwrap_or_default();
    integer_part.chars().filter(char::is_ascii_digit).collect()
}

pub fn normalize_tokens(detections: &[TextDetection]) -> Vec<NormalizedToken> {
    detections
        .iter()
        .filter_map(|d| {
            let digits = token_digits(&d.text);
            (!digits.is_empty()).then(|| NormalizedToken { digits, confidence: d.confidence, bbox: d.bbox })
        })
        .collect()
}

/// Total order over survivors: smallest advance, higher confidence, topmost,
/// leftmost, then the token text.
fn rank(a: &(u64, &NormalizedToken), b: &(u64, &NormalizedToken)) -> Ordering {
    a.0.cmp(&b.0)
        .then(b.1.confidence.total_cmp(&a.1.confidence))
        .then(a.1.bbox.y.total_cmp(&b.1.bbox.y))
        .then(a.1.bbox.x.total_cmp(&b.1.bbox.x))
        .then_with(|| a.1.digits.cmp(&b.1.digits))
}

pub fn refine(detections: &[TextDetection], ctx: &MeterContext) -> RefinementResult {
    let tokens = normalize_tokens(detections);
    let last = ctx.last_value();
    let len = ctx.register_length();

    let candidates = tokens
        .iter()
        .map(|t| Candidate {
            token: t.digits.clone(),
            delta: (t.digits.len() == len).then(|| t.digits.parse::<i64>().expect("<= 12 digits") - last as i64),
            confidence: t.confidence,
        })
        .collect();

    let winner = tokens
        .iter()
        .filter(|t| t.digits.len() == len)
        .filter_map(|t| {
            let value: u64 = t.digits.parse().ok()?;
            let advance = value.checked_sub(last)?;
            (advance <= ctx.max_delta()).then_some((advance, t))
        })
        .min_by(rank);

    match winner {
        Some((_, t)) => RefinementResult { reading: t.digits.clone(), fallback: false, candidates },
        None => RefinementResult { reading: ctx.last_reading().to_string(), fallback: true, candidates },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(text: &str, conf: f64, x: f64, y: f64) -> TextDetection {
        TextDetection::new(text, conf, BBox::new(x, y, 10.0, 10.0))
    }

    #[test]
    fn digit_extraction() {
        let dets = [det("kWh", 1.0, 0.0, 0.0), det("0 1 2 3 4", 0.9, 0.0, 1.0), det("SN-998877", 0.8, 0.0, 2.0)];
        let tokens: Vec<_> = normalize_tokens(&dets).into_iter().map(|t| t.digits).collect();
        assert_eq!(tokens, ["01234", "998877"]);
        assert!(normalize_tokens(&[]).is_empty());
        assert!(normalize_tokens(&[det("½", 1.0, 0.0, 0.0), det("--", 1.0, 0.0, 0.0)]).is_empty());
        assert_eq!(token_digits("01234.7"), "01234");
        assert_eq!(token_digits("0123,45"), "0123");
        assert_eq!(token_digits(".5"), "");
    }

    #[test]
    fn picks_plausible_reading() {
        let dets = [det("kWh", 1.0, 0.0, 0.0), det("01234", 0.9, 0.0, 1.0), det("SN 998877", 0.8, 0.0, 2.0)];
        let ctx = MeterContext::new("01200", 500).unwrap();
        let r = refine(&dets, &ctx);
        assert_eq!(r.reading, "01234");
        assert!(!r.fallback);
        assert_eq!(r.candidates.len(), 2);
        assert_eq!(r.candidates[0].delta, Some(34));
        assert_eq!(r.candidates[1].delta, None);
    }

    #[test]
    fn falls_back_without_survivors() {
        let ctx = MeterContext::new("00042", DEFAULT_MAX_DELTA).unwrap();
        assert_eq!(refine(&[], &ctx), RefinementResult { reading: "00042".into(), fallback: true, candidates: vec![] });
        let ctx = MeterContext::new("00100", 500).unwrap();
        let r = refine(&[det("99999", 0.99, 0.0, 0.0)], &ctx);
        assert_eq!((r.reading.as_str(), r.fallback), ("00100", true));
        assert_eq!(r.candidates[0].delta, Some(99899));
        // below the last reading
        let r = refine(&[det("00099", 0.99, 0.0, 0.0)], &ctx);
        assert!(r.fallback);
    }

    #[test]
    fn tie_breaks() {
        let ctx = MeterContext::new("00100", 500).unwrap();
        let r = refine(&[det("00150", 0.5, 0.0, 0.0), det("00120", 0.4, 0.0, 5.0)], &ctx);
        assert_eq!(r.reading, "00120");
        let r = refine(&[det("00130", 0.5, 0.0, 0.0), det("00130", 0.9, 0.0, 5.0), det("00131", 1.0, 0.0, 0.0)], &ctx);
        assert_eq!(r.reading, "00130");
        assert_eq!(refine(&[det("00100", 0.1, 0.0, 0.0)], &ctx).reading, "00100");
    }

    #[test]
    fn context_validation() {
        assert!(MeterContext::new("", 1).is_err());
        assert!(MeterContext::new("12a", 1).is_err());
        assert!(MeterContext::new("1234567890123", 1).is_err());
        assert_eq!(MeterContext::new("000000000000", 1).unwrap().register_length(), 12);
    }
}
