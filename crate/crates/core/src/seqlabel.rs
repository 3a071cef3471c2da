//! Token tag sequences and entity spans.
//!
//! Decoding accepts BIO and BIOES tags (`O`, `B-X`, `I-X`, `E-X`, `S-X`).
//! Encoding produces BIO. Free-text entity mentions can be mapped back onto
//! token positions with [`align_mentions`].

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SeqLabelError {
    #[error("invalid tag `{tag}` at position {position}")]
    InvalidTag { position: usize, tag: String },
    #[error("{tokens} tokens but {tags} tags")]
    LengthMismatch { tokens: usize, tags: usize },
    #[error("spans {first} and {second} overlap")]
    OverlappingSpans { first: String, second: String },
    #[error("span {span} does not fit a sentence of {len} tokens")]
    SpanOutOfRange { span: String, len: usize },
    #[error("line {line}: {message}")]
    Conll { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
    End(&'a str),
    Single(&'a str),
}

impl<'a> Tag<'a> {
    pub fn parse(tag: &'a str) -> Option<Tag<'a>> {
        if tag == "O" {
            return Some(Tag::Outside);
        }
        let (prefix, label) = tag.split_once('-')?;
        if label.is_empty() {
            return None;
        }
        match prefix {
            "B" => Some(Tag::Begin(label)),
            "I" => Some(Tag::Inside(label)),
            "E" => Some(Tag::End(label)),
            "S" => Some(Tag::Single(label)),
            _ => None,
        }
    }
}

fn check_tag(position: usize, tag: &str) -> Result<Tag<'_>, SeqLabelError> {
    Tag::parse(tag).ok_or_else(|| SeqLabelError::InvalidTag {
        position,
        tag: tag.to_owned(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    /// Inclusive token index.
    pub start: usize,
    /// Exclusive token index.
    pub end: usize,
    pub label: String,
    pub surface: String,
}

impl EntitySpan {
    pub fn new(tokens: &[String], start: usize, end: usize, label: impl Into<String>) -> Self {
        EntitySpan {
            start,
            end,
            label: label.into(),
            surface: tokens[start..end].join(" "),
        }
    }

    /// Identity used for exact-match scoring.
    pub fn key(&self) -> (usize, usize, &str) {
        (self.start, self.end, &self.label)
    }
}

impl fmt::Display for EntitySpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}) {}", self.start, self.end, self.label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
}

impl TaggedSentence {
    pub fn new(tokens: Vec<String>, tags: Vec<String>) -> Result<Self, SeqLabelError> {
        if tokens.len() != tags.len() {
            return Err(SeqLabelError::LengthMismatch {
                tokens: tokens.len(),
                tags: tags.len(),
            });
        }
        for (i, tag) in tags.iter().enumerate() {
            check_tag(i, tag)?;
        }
        Ok(TaggedSentence { tokens, tags })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// How to treat `I-X`/`E-X` tags that do not continue an open `X` span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Decoding {
    /// An orphan continuation tag opens a new span.
    #[default]
    Lenient,
    /// Orphan continuation tags are ignored.
    Strict,
}

/// Decodes tags into sorted, disjoint spans.
pub fn tags_to_spans(sentence: &TaggedSentence, mode: Decoding) -> Result<Vec<EntitySpan>, SeqLabelError> {
    if sentence.tokens.len() != sentence.tags.len() {
        return Err(SeqLabelError::LengthMismatch {
            tokens: sentence.tokens.len(),
            tags: sentence.tags.len(),
        });
    }
    let tokens = &sentence.tokens;
    let mut spans = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    let close = |open: &mut Option<(usize, &str)>, end: usize, spans: &mut Vec<EntitySpan>| {
        if let Some((start, label)) = open.take() {
            spans.push(EntitySpan::new(tokens, start, end, label));
        }
    };

    for (i, raw) in sentence.tags.iter().enumerate() {
        match check_tag(i, raw)? {
            Tag::Outside => close(&mut open, i, &mut spans),
            Tag::Begin(label) => {
                close(&mut open, i, &mut spans);
                open = Some((i, label));
            }
            Tag::Inside(label) => match open {
                Some((_, current)) if current == label => {}
                _ => {
                    close(&mut open, i, &mut spans);
                    if mode == Decoding::Lenient {
                        open = Some((i, label));
                    }
                }
            },
            Tag::End(label) => match open {
                Some((_, current)) if current == label => close(&mut open, i + 1, &mut spans),
                _ => {
                    close(&mut open, i, &mut spans);
                    if mode == Decoding::Lenient {
                        spans.push(EntitySpan::new(tokens, i, i + 1, label));
                    }
                }
            },
            Tag::Single(label) => {
                close(&mut open, i, &mut spans);
                spans.push(EntitySpan::new(tokens, i, i + 1, label));
            }
        }
    }
    close(&mut open, tokens.len(), &mut spans);
    Ok(spans)
}

/// Encodes spans as BIO tags. Spans may come in any order but must not overlap.
pub fn spans_to_tags(tokens: &[String], spans: &[EntitySpan]) -> Result<TaggedSentence, SeqLabelError> {
    let mut sorted: Vec<&EntitySpan> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    for span in &sorted {
        if span.start >= span.end || span.end > tokens.len() {
            return Err(SeqLabelError::SpanOutOfRange {
                span: span.to_string(),
                len: tokens.len(),
            });
        }
    }
    for pair in sorted.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(SeqLabelError::OverlappingSpans {
                first: pair[0].to_string(),
                second: pair[1].to_string(),
            });
        }
    }
    let mut tags = vec!["O".to_string(); tokens.len()];
    for span in sorted {
        tags[span.start] = format!("B-{}", span.label);
        for tag in &mut tags[span.start + 1..span.end] {
            *tag = format!("I-{}", span.label);
        }
    }
    TaggedSentence::new(tokens.to_vec(), tags)
}

/// An entity mention as free text plus its label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub surface: String,
    pub label: String,
}

impl Mention {
    pub fn new(surface: impl Into<String>, label: impl Into<String>) -> Self {
        Mention {
            surface: surface.into(),
            label: label.into(),
        }
    }
}

/// Places each mention at the leftmost run of unclaimed tokens equal to its
/// whitespace-split surface. Mentions are processed in order; a token is
/// never claimed twice. Mentions with no match are returned unaligned.
pub fn align_mentions(tokens: &[String], mentions: &[Mention]) -> (TaggedSentence, Vec<Mention>) {
    let mut claimed = vec![false; tokens.len()];
    let mut spans = Vec::new();
    let mut unaligned = Vec::new();

    for mention in mentions {
        let needle: Vec<&str> = mention.surface.split_whitespace().collect();
        let n = needle.len();
        let hit = (n > 0 && n <= tokens.len())
            .then(|| {
                (0..=tokens.len() - n).find(|&i| {
                    !claimed[i..i + n].iter().any(|&c| c)
                        && tokens[i..i + n].iter().zip(&needle).all(|(t, m)| t == m)
                })
            })
            .flatten();
        match hit {
            Some(start) if Tag::parse(&format!("B-{}", mention.label)).is_some() => {
                claimed[start..start + n].iter_mut().for_each(|c| *c = true);
                spans.push(EntitySpan::new(tokens, start, start + n, mention.label.clone()));
            }
            _ => unaligned.push(mention.clone()),
        }
    }
    let sentence = spans_to_tags(tokens, &spans).expect("claimed spans are disjoint and in range");
    (sentence, unaligned)
}

/// Pairs with different token counts cannot be compared position by position.
pub fn filter_length_mismatch(predicted: &TaggedSentence, gold: &TaggedSentence) -> bool {
    predicted.tokens.len() == gold.tokens.len()
}

/// One sentence in span form, as stored in span JSONL files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanDocument {
    pub tokens: Vec<String>,
    pub spans: Vec<EntitySpan>,
}

impl SpanDocument {
    pub fn from_sentence(sentence: &TaggedSentence, mode: Decoding) -> Result<Self, SeqLabelError> {
        Ok(SpanDocument {
            tokens: sentence.tokens.clone(),
            spans: tags_to_spans(sentence, mode)?,
        })
    }

    pub fn to_sentence(&self) -> Result<TaggedSentence, SeqLabelError> {
        spans_to_tags(&self.tokens, &self.spans)
    }
}

/// Reads CoNLL-style columns: one `token<TAB>tag` per line, blank line between
/// sentences. Lines with more than two tab-separated columns use the first as
/// token and the last as tag; `-DOCSTART-` lines are skipped.
pub fn read_conll<R: BufRead>(reader: R) -> Result<Vec<TaggedSentence>, SeqLabelError> {
    let mut sentences = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let flush = |tokens: &mut Vec<String>, tags: &mut Vec<String>, out: &mut Vec<TaggedSentence>| {
        if !tokens.is_empty() {
            out.push(TaggedSentence {
                tokens: std::mem::take(tokens),
                tags: std::mem::take(tags),
            });
        }
    };

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| SeqLabelError::Conll {
            line: line_no,
            message: e.to_string(),
        })?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            flush(&mut tokens, &mut tags, &mut sentences);
            continue;
        }
        if line.starts_with("-DOCSTART-") {
            continue;
        }
        let columns: Vec<&str> = line.split('\t').collect();
        if columns.len() < 2 {
            return Err(SeqLabelError::Conll {
                line: line_no,
                message: format!("expected `token<TAB>tag`, got `{line}`"),
            });
        }
        let (token, tag) = (columns[0], columns[columns.len() - 1]);
        if Tag::parse(tag).is_none() {
            return Err(SeqLabelError::Conll {
                line: line_no,
                message: format!("invalid tag `{tag}`"),
            });
        }
        tokens.push(token.to_owned());
        tags.push(tag.to_owned());
    }
    flush(&mut tokens, &mut tags, &mut sentences);
    Ok(sentences)
}

/// Writes `token<TAB>tag` lines, each sentence followed by a blank line.
pub fn write_conll<W: Write>(out: &mut W, sentences: &[TaggedSentence]) -> std::io::Result<()> {
    for sentence in sentences {
        for (token, tag) in sentence.tokens.iter().zip(&sentence.tags) {
            writeln!(out, "{token}\t{tag}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    fn sentence(tokens: &str, tags: &str) -> TaggedSentence {
        TaggedSentence::new(toks(tokens), toks(tags)).unwrap()
    }

    fn span(start: usize, end: usize, label: &str, surface: &str) -> EntitySpan {
        EntitySpan { start, end, label: label.into(), surface: surface.into() }
    }

    #[test]
    fn decodes_bio() {
        let s = sentence("Barack Obama visited Berlin", "B-PER I-PER O B-LOC");
        assert_eq!(
            tags_to_spans(&s, Decoding::Lenient).unwrap(),
            vec![span(0, 2, "PER", "Barack Obama"), span(3, 4, "LOC", "Berlin")]
        );
    }

    #[test]
    fn all_outside_is_empty() {
        let s = sentence("a b c", "O O O");
        assert!(tags_to_spans(&s, Decoding::Lenient).unwrap().is_empty());
    }

    #[test]
    fn orphan_inside_lenient_vs_strict() {
        let s = sentence("Obama spoke", "I-PER O");
        assert_eq!(tags_to_spans(&s, Decoding::Lenient).unwrap(), vec![span(0, 1, "PER", "Obama")]);
        assert!(tags_to_spans(&s, Decoding::Strict).unwrap().is_empty());
    }

    #[test]
    fn type_change_inside_splits_span() {
        let s = sentence("a b c", "B-PER I-LOC I-LOC");
        assert_eq!(
            tags_to_spans(&s, Decoding::Lenient).unwrap(),
            vec![span(0, 1, "PER", "a"), span(1, 3, "LOC", "b c")]
        );
    }

    #[test]
    fn decodes_bioes() {
        let s = sentence("New York City and Paris", "B-LOC I-LOC E-LOC O S-LOC");
        assert_eq!(
            tags_to_spans(&s, Decoding::Strict).unwrap(),
            vec![span(0, 3, "LOC", "New York City"), span(4, 5, "LOC", "Paris")]
        );
        let s = sentence("x y", "E-PER S-PER");
        assert_eq!(tags_to_spans(&s, Decoding::Lenient).unwrap().len(), 2);
        assert_eq!(tags_to_spans(&s, Decoding::Strict).unwrap().len(), 1);
    }

    #[test]
    fn invalid_tags() {
        let s = TaggedSentence { tokens: toks("a b"), tags: toks("O X-PER") };
        assert_eq!(
            tags_to_spans(&s, Decoding::Lenient).unwrap_err(),
            SeqLabelError::InvalidTag { position: 1, tag: "X-PER".into() }
        );
        assert!(TaggedSentence::new(toks("a"), toks("B-")).is_err());
        assert!(TaggedSentence::new(toks("a"), toks("O O")).is_err());
    }

    #[test]
    fn encodes_inverse() {
        let s = sentence("Barack Obama visited Berlin", "B-PER I-PER O B-LOC");
        let spans = tags_to_spans(&s, Decoding::Lenient).unwrap();
        assert_eq!(spans_to_tags(&s.tokens, &spans).unwrap(), s);
        assert_eq!(spans_to_tags(&s.tokens, &[]).unwrap().tags, toks("O O O O"));
    }

    #[test]
    fn overlapping_spans_rejected() {
        let t = toks("a b c");
        let err = spans_to_tags(&t, &[span(0, 2, "X", ""), span(1, 3, "Y", "")]).unwrap_err();
        assert!(matches!(err, SeqLabelError::OverlappingSpans { .. }));
        let err = spans_to_tags(&t, &[span(2, 4, "X", "")]).unwrap_err();
        assert!(matches!(err, SeqLabelError::SpanOutOfRange { .. }));
    }

    #[test]
    fn align_single_token() {
        let (s, missed) = align_mentions(&toks("John lives in Berlin"), &[Mention::new("Berlin", "LOC")]);
        assert_eq!(s.tags, toks("O O O B-LOC"));
        assert!(missed.is_empty());
    }

    #[test]
    fn align_absent_mention() {
        let (s, missed) = align_mentions(&toks("John lives in Berlin"), &[Mention::new("Paris", "LOC")]);
        assert_eq!(s.tags, toks("O O O O"));
        assert_eq!(missed, vec![Mention::new("Paris", "LOC")]);
    }

    #[test]
    fn align_multi_token() {
        let (s, missed) = align_mentions(&toks("John lives in Berlin"), &[Mention::new("in Berlin", "LOC")]);
        assert_eq!(s.tags, toks("O O B-LOC I-LOC"));
        assert!(missed.is_empty());
    }

    #[test]
    fn align_never_reclaims_tokens() {
        let tokens = toks("Paris and Paris");
        let (s, missed) = align_mentions(
            &tokens,
            &[Mention::new("Paris", "LOC"), Mention::new("Paris", "ORG"), Mention::new("and Paris", "X")],
        );
        assert_eq!(s.tags, toks("B-LOC O B-ORG"));
        assert_eq!(missed, vec![Mention::new("and Paris", "X")]);
    }

    #[test]
    fn length_filter() {
        let a = sentence("a b", "O O");
        assert!(filter_length_mismatch(&a, &a));
        let ten = TaggedSentence::new(vec!["x".into(); 10], vec!["O".into(); 10]).unwrap();
        let nine = TaggedSentence::new(vec!["x".into(); 9], vec!["O".into(); 9]).unwrap();
        assert!(!filter_length_mismatch(&ten, &nine));
    }

    #[test]
    fn conll_round_trip_bytes() {
        let text = "Barack\tB-PER\nObama\tI-PER\nvisited\tO\nBerlin\tB-LOC\n\nHi\tO\n\n";
        let sentences = read_conll(text.as_bytes()).unwrap();
        assert_eq!(sentences.len(), 2);
        let mut out = Vec::new();
        write_conll(&mut out, &sentences).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn conll_reader_details() {
        let text = "-DOCSTART-\tO\n\nEU\tNNP\tB-NP\tB-ORG\r\nrejects\tVBZ\tB-VP\tO\n";
        let sentences = read_conll(text.as_bytes()).unwrap();
        assert_eq!(sentences, vec![sentence("EU rejects", "B-ORG O")]);
        assert!(read_conll("".as_bytes()).unwrap().is_empty());
        let err = read_conll("a\tO\nb\tQ-X\n".as_bytes()).unwrap_err();
        assert!(matches!(err, SeqLabelError::Conll { line: 2, .. }));
        let err = read_conll("lonely\n".as_bytes()).unwrap_err();
        assert!(matches!(err, SeqLabelError::Conll { line: 1, .. }));
    }

    fn arb_strict_bio() -> impl Strategy<Value = TaggedSentence> {
        prop::collection::vec((0u8..3, 0usize..4), 0..=20).prop_map(|steps| {
            let types = ["PER", "LOC", "ORG", "MISC"];
            let mut tags: Vec<String> = Vec::new();
            let mut current: Option<&str> = None;
            for (kind, ty) in steps {
                let tag = match (kind, current) {
                    (1, Some(t)) => format!("I-{t}"),
                    (0, _) => {
                        current = None;
                        "O".to_string()
                    }
                    _ => {
                        current = Some(types[ty]);
                        format!("B-{}", types[ty])
                    }
                };
                tags.push(tag);
            }
            let tokens = (0..tags.len()).map(|i| format!("w{i}")).collect();
            TaggedSentence::new(tokens, tags).unwrap()
        })
    }

    proptest! {
        #[test]
        fn bio_round_trip(s in arb_strict_bio()) {
            let spans = tags_to_spans(&s, Decoding::Strict).unwrap();
            prop_assert_eq!(spans_to_tags(&s.tokens, &spans).unwrap(), s);
        }

        #[test]
        fn decoded_spans_sorted_and_disjoint(
            tags in prop::collection::vec(prop_oneof![
                Just("O".to_string()),
                "[BIES]-(A|B)".prop_map(|s| s),
            ], 0..20),
            strict in any::<bool>(),
        ) {
            let tokens: Vec<String> = (0..tags.len()).map(|i| i.to_string()).collect();
            let s = TaggedSentence::new(tokens, tags).unwrap();
            let mode = if strict { Decoding::Strict } else { Decoding::Lenient };
            let spans = tags_to_spans(&s, mode).unwrap();
            for w in spans.windows(2) {
                prop_assert!(w[0].end <= w[1].start);
            }
            for sp in &spans {
                prop_assert!(sp.start < sp.end && sp.end <= s.len());
            }
        }

        #[test]
        fn alignment_output_is_valid(
            words in prop::collection::vec("[a-c]", 0..12),
            mentions in prop::collection::vec(("[a-c]( [a-c]){0,2}", "[A-Z]{1,3}"), 0..5),
        ) {
            let mentions: Vec<Mention> = mentions.into_iter().map(|(s, l)| Mention::new(s, l)).collect();
            let (s, missed) = align_mentions(&words, &mentions);
            prop_assert_eq!(s.tokens.len(), s.tags.len());
            prop_assert!(TaggedSentence::new(s.tokens.clone(), s.tags.clone()).is_ok());
            let spans = tags_to_spans(&s, Decoding::Strict).unwrap();
            prop_assert_eq!(spans.len() + missed.len(), mentions.len());
        }
    }
}
