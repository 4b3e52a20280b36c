//! Tokenization, vocabularies, fixed-length encoding and the JSONL corpus
//! format.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traits::{Level, TraitMap};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const NUM_SPECIALS: usize = 4;

pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Prefixed to corpus tokens that would otherwise collide with a special's
/// surface form (or that already start with the sentinel).
pub const ESCAPE_SENTINEL: char = '\u{E000}';

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizeMode {
    #[default]
    Whitespace,
    CjkChar,
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3000..=0x303F      // CJK symbols and punctuation
        | 0x3040..=0x30FF    // kana
        | 0x3400..=0x4DBF    // extension A
        | 0x4E00..=0x9FFF    // unified ideographs
        | 0xAC00..=0xD7AF    // hangul syllables
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0xFF00..=0xFFEF    // half/fullwidth forms
        | 0x20000..=0x2FA1F) // extensions B and later
}

pub fn tokenize(text: &str, mode: TokenizeMode) -> Vec<String> {
    match mode {
        TokenizeMode::Whitespace => text.split_whitespace().map(str::to_string).collect(),
        TokenizeMode::CjkChar => {
            let mut out = Vec::new();
            let mut run = String::new();
            for c in text.chars() {
                if c.is_whitespace() || is_cjk(c) {
                    if !run.is_empty() {
                        out.push(std::mem::take(&mut run));
                    }
                    if !c.is_whitespace() {
                        out.push(c.to_string());
                    }
                } else {
                    run.push(c);
                }
            }
            if !run.is_empty() {
                out.push(run);
            }
            out
        }
    }
}

pub fn tokenize_bytes(bytes: &[u8], mode: TokenizeMode) -> Result<Vec<String>> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::Encoding { line: None })?;
    Ok(tokenize(text, mode))
}

/// Joins tokens back into surface text. In `CjkChar` mode CJK characters are
/// joined without spaces and other tokens are space-separated.
pub fn detokenize(tokens: &[String], mode: TokenizeMode) -> String {
    match mode {
        TokenizeMode::Whitespace => tokens.join(" "),
        TokenizeMode::CjkChar => {
            let mut out = String::new();
            let mut prev_cjk = true;
            for (i, tok) in tokens.iter().enumerate() {
                let cjk = tok.chars().count() == 1 && tok.chars().all(is_cjk);
                if i > 0 && !(cjk || prev_cjk) {
                    out.push(' ');
                }
                out.push_str(tok);
                prev_cjk = cjk;
            }
            out
        }
    }
}

fn escape(token: &str) -> String {
    if SPECIAL_TOKENS.contains(&token) || token.starts_with(ESCAPE_SENTINEL) {
        format!("{ESCAPE_SENTINEL}{token}")
    } else {
        token.to_string()
    }
}

fn unescape(stored: &str) -> &str {
    stored.strip_prefix(ESCAPE_SENTINEL).unwrap_or(stored)
}

/// Token/id bijection. Ids 0..4 are the specials PAD, UNK, BOS, EOS.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    stored: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn specials_only() -> Self {
        Self::from_stored(SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect()).expect("specials are valid")
    }

    /// Rebuilds a vocabulary from its stored (escaped) token list, as written
    /// by [`Vocabulary::stored_tokens`].
    pub fn from_stored(stored: Vec<String>) -> Result<Self> {
        if stored.len() < NUM_SPECIALS || stored[..NUM_SPECIALS] != SPECIAL_TOKENS {
            return Err(Error::Validation("vocabulary must start with <pad>, <unk>, <bos>, <eos>".into()));
        }
        let mut index = HashMap::with_capacity(stored.len());
        for (i, tok) in stored.iter().enumerate() {
            if index.insert(tok.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Vocabulary { stored, index })
    }

    pub fn stored_tokens(&self) -> &[String] {
        &self.stored
    }

    pub fn len(&self) -> usize {
        self.stored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stored.is_empty()
    }

    /// Id of a corpus token, `UNK` when absent.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(escape(token).as_str()).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.get(token).is_some()
    }

    /// Surface form of an id. Specials return their bracketed names.
    pub fn token(&self, id: usize) -> Result<&str> {
        let stored = self.stored.get(id).ok_or(Error::InvalidId { id, size: self.len() })?;
        Ok(if id < NUM_SPECIALS { stored } else { unescape(stored) })
    }

    pub fn is_special(id: usize) -> bool {
        id < NUM_SPECIALS
    }
}

/// Frequency-ranked vocabulary: tokens seen at least `min_count` times,
/// ordered by count descending then token ascending, capped so the total
/// size (specials included) is at most `max_size`.
pub fn build_vocab<'a, I>(corpus: I, min_count: usize, max_size: usize) -> Vocabulary
where
    I: IntoIterator<Item = &'a [String]>,
{
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for doc in corpus {
        for tok in doc {
            *counts.entry(tok.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size.saturating_sub(NUM_SPECIALS));

    let mut stored: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    stored.extend(ranked.into_iter().map(|(t, _)| escape(t)));
    Vocabulary::from_stored(stored).expect("escaped corpus tokens never collide with specials")
}

/// A fixed-length id sequence: BOS, token ids, EOS, then PAD.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedText {
    pub ids: Vec<usize>,
    pub mask: Vec<u8>,
}

impl EncodedText {
    /// Number of non-pad positions.
    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m != 0).count()
    }

    pub fn max_len(&self) -> usize {
        self.ids.len()
    }
}

pub fn encode(tokens: &[String], vocab: &Vocabulary, max_len: usize) -> EncodedText {
    assert!(max_len >= 2, "encode needs max_len >= 2 to hold BOS and EOS");
    let body = tokens.len().min(max_len - 2);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(BOS);
    ids.extend(tokens[..body].iter().map(|t| vocab.id(t)));
    ids.push(EOS);
    let valid = ids.len();
    ids.resize(max_len, PAD);
    let mut mask = vec![1u8; valid];
    mask.resize(max_len, 0);
    EncodedText { ids, mask }
}

/// Maps ids back to tokens, dropping BOS, EOS and PAD.
pub fn decode(ids: &[usize], vocab: &Vocabulary) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for &id in ids {
        let tok = vocab.token(id)?;
        if !matches!(id, PAD | BOS | EOS) {
            out.push(tok.to_string());
        }
    }
    Ok(out)
}

/// A short text with optional binary trait labels and trinary levels.
/// `latent` holds the planted polarity vector of synthetic documents.
#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub text: String,
    pub tokens: Vec<String>,
    pub labels: Option<TraitMap<u8>>,
    pub levels: Option<TraitMap<Level>>,
    pub latent: Option<TraitMap<u8>>,
}

impl Document {
    pub fn new(text: impl Into<String>, mode: TokenizeMode) -> Self {
        let text = text.into();
        let tokens = tokenize(&text, mode);
        Document {
            text,
            tokens,
            labels: None,
            levels: None,
            latent: None,
        }
    }

    fn to_record(&self) -> DocumentRecord {
        DocumentRecord {
            text: self.text.clone(),
            labels: self.labels,
            levels: self.levels,
            latent: self.latent,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct DocumentRecord {
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<TraitMap<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    levels: Option<TraitMap<Level>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    latent: Option<TraitMap<u8>>,
}

fn check_bits(bits: &TraitMap<u8>, field: &str) -> std::result::Result<(), String> {
    match bits.iter().find(|(_, &b)| b > 1) {
        Some((t, b)) => Err(format!("{field}.{t} must be 0 or 1, got {b}")),
        None => Ok(()),
    }
}

/// Parses JSONL corpus records. Blank lines are skipped; any other
/// malformed line is an error naming its line number.
pub fn parse_corpus<R: Read>(reader: R, source: &str, mode: TokenizeMode) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut reader = BufReader::new(reader);
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader
            .read_until(b'\n', &mut buf)
            .map_err(|e| Error::io(source, e))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let line = std::str::from_utf8(&buf).map_err(|_| Error::Encoding { line: Some(line_no) })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: source.to_string(),
            line: line_no,
            message,
        };
        let rec: DocumentRecord = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        for (bits, field) in [(&rec.labels, "labels"), (&rec.latent, "latent")] {
            if let Some(b) = bits {
                check_bits(b, field).map_err(parse_err)?;
            }
        }
        let mut doc = Document::new(rec.text, mode);
        doc.labels = rec.labels;
        doc.levels = rec.levels;
        doc.latent = rec.latent;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn read_corpus(path: impl AsRef<Path>, mode: TokenizeMode) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(file, &path.display().to_string(), mode)
}

pub fn corpus_to_jsonl(docs: &[Document]) -> Result<String> {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(&d.to_record())?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(corpus_to_jsonl(docs)?.as_bytes())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn tokenize_modes() {
        assert_eq!(tokenize("a b  c", TokenizeMode::Whitespace), toks(&["a", "b", "c"]));
        assert_eq!(tokenize("我爱NLP", TokenizeMode::CjkChar), toks(&["我", "爱", "NLP"]));
        assert!(tokenize("", TokenizeMode::CjkChar).is_empty());
        assert_eq!(
            tokenize("好 😊😊 ok，走", TokenizeMode::CjkChar),
            toks(&["好", "😊😊", "ok", "，", "走"])
        );
        assert!(matches!(
            tokenize_bytes(&[0xff, 0xfe], TokenizeMode::Whitespace),
            Err(Error::Encoding { .. })
        ));
    }

    #[test]
    fn detokenize_cjk_spacing() {
        let t = toks(&["我", "爱", "NLP", "rocks", "！"]);
        assert_eq!(detokenize(&t, TokenizeMode::CjkChar), "我爱NLP rocks！");
    }

    #[test]
    fn vocab_rules() {
        let empty: Vec<Vec<String>> = vec![];
        assert_eq!(build_vocab(empty.iter().map(|d| d.as_slice()), 1, 100).len(), 4);

        let docs = [toks(&["x", "y", "x"]), toks(&["x"])];
        let v = build_vocab(docs.iter().map(|d| d.as_slice()), 2, 100);
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("x"), 4);
        assert_eq!(v.id("y"), UNK);

        let docs = [toks(&["b", "a", "c", "a", "b", "c"])];
        let v = build_vocab(docs.iter().map(|d| d.as_slice()), 1, 100);
        assert_eq!(&v.stored_tokens()[4..], &toks(&["a", "b", "c"])[..]);

        let v = build_vocab(docs.iter().map(|d| d.as_slice()), 1, 6);
        assert_eq!(v.len(), 6);
    }

    #[test]
    fn special_surface_forms_are_escaped() {
        let docs = [toks(&["<pad>", "<pad>", "\u{E000}x", "y"])];
        let v = build_vocab(docs.iter().map(|d| d.as_slice()), 1, 100);
        let pad_tok = v.id("<pad>");
        assert!(pad_tok >= NUM_SPECIALS);
        assert_eq!(v.token(pad_tok).unwrap(), "<pad>");
        let sentinel_tok = v.id("\u{E000}x");
        assert_eq!(v.token(sentinel_tok).unwrap(), "\u{E000}x");
        let enc = encode(&toks(&["<pad>", "y"]), &v, 6);
        assert_eq!(decode(&enc.ids, &v).unwrap(), toks(&["<pad>", "y"]));
    }

    #[test]
    fn encode_cases() {
        let v = build_vocab([toks(&["a", "b", "c"])].iter().map(|d| d.as_slice()), 1, 100);
        let e = encode(&[], &v, 4);
        assert_eq!(e.ids, vec![BOS, EOS, PAD, PAD]);
        assert_eq!(e.mask, vec![1, 1, 0, 0]);

        assert_eq!(encode(&toks(&["zzz"]), &v, 4).ids[1], UNK);

        let long: Vec<String> = (0..10).map(|i| ["a", "b", "c"][i % 3].to_string()).collect();
        let e = encode(&long, &v, 6);
        let expect: Vec<usize> = std::iter::once(BOS)
            .chain(long[..4].iter().map(|t| v.id(t)))
            .chain(std::iter::once(EOS))
            .collect();
        assert_eq!(e.ids, expect);
        assert_eq!(e.mask, vec![1; 6]);
    }

    #[test]
    fn decode_cases() {
        let v = build_vocab([toks(&["a", "b"])].iter().map(|d| d.as_slice()), 1, 100);
        assert_eq!(decode(&[BOS, 5, EOS, PAD], &v).unwrap(), vec![v.token(5).unwrap().to_string()]);
        assert!(decode(&[], &v).unwrap().is_empty());
        assert!(matches!(decode(&[99], &v), Err(Error::InvalidId { id: 99, .. })));
    }

    #[test]
    fn corpus_parsing() {
        let input = concat!(
            r#"{"text": "a b", "labels": {"E":1,"A":0,"C":1,"N":0,"O":1}, "extra": 3}"#,
            "\n\n",
            r#"{"text": "c", "levels": {"E":"low","A":"medium","C":"high","N":"low","O":"low"}}"#,
            "\n"
        );
        let docs = parse_corpus(input.as_bytes(), "mem", TokenizeMode::Whitespace).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].tokens, toks(&["a", "b"]));
        assert_eq!(docs[0].labels, Some(TraitMap([1, 0, 1, 0, 1])));
        assert_eq!(docs[1].levels.unwrap().0[2], Level::High);

        let bad = "{\"text\": \"a\"}\n{\"text\": 5}\n";
        match parse_corpus(bad.as_bytes(), "mem", TokenizeMode::Whitespace) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let bad_label = r#"{"text": "a", "labels": {"E":2,"A":0,"C":1,"N":0,"O":1}}"#;
        assert!(parse_corpus(bad_label.as_bytes(), "mem", TokenizeMode::Whitespace).is_err());
        let bad_utf8: &[u8] = b"{\"text\": \"\xff\"}\n";
        assert!(matches!(
            parse_corpus(bad_utf8, "mem", TokenizeMode::Whitespace),
            Err(Error::Encoding { line: Some(1) })
        ));
    }

    #[test]
    fn corpus_round_trip() {
        let mut d = Document::new("x y", TokenizeMode::Whitespace);
        d.labels = Some(TraitMap([0, 1, 0, 1, 0]));
        let s = corpus_to_jsonl(&[d.clone()]).unwrap();
        let back = parse_corpus(s.as_bytes(), "mem", TokenizeMode::Whitespace).unwrap();
        assert_eq!(back, vec![d]);
    }
}
