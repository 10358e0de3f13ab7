//! Byte-level BPE tokenizer compatible with the CLIP text tower.
//!
//! The merge table ships as a gzip asset whose SHA-256 is pinned; token ids
//! are positions in the vocabulary built from that file, so nothing here
//! hard-codes an id.

use std::collections::HashMap;
use std::io::Read;
use std::sync::OnceLock;

use flate2::read::GzDecoder;
use regex::Regex;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Fixed context length of the text encoder.
pub const CONTEXT_LENGTH: usize = 77;
/// Room for content tokens between the start and end markers.
pub const MAX_CONTENT_TOKENS: usize = CONTEXT_LENGTH - 2;

const VOCAB_GZ: &[u8] = include_bytes!("../assets/bpe_simple_vocab_16e6.txt.gz");
pub const VOCAB_SHA256: &str = "924691ac288e54409236115652ad4aa250f48203de50a9e4722a6ecd48d6804a";

/// Number of merge rules used from the vocabulary file.
const MERGE_COUNT: usize = 49152 - 256 - 2;

const START_OF_TEXT: &str = "<|startoftext|>";
const END_OF_TEXT: &str = "<|endoftext|>";

/// Token ids padded to [`CONTEXT_LENGTH`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    ids: [u32; CONTEXT_LENGTH],
    attention_length: usize,
}

impl TokenSequence {
    pub fn ids(&self) -> &[u32; CONTEXT_LENGTH] {
        &self.ids
    }

    /// Number of positions up to and including the end marker.
    pub fn attention_length(&self) -> usize {
        self.attention_length
    }

    /// Ids between the start and end markers.
    pub fn content(&self) -> &[u32] {
        &self.ids[1..self.attention_length - 1]
    }
}

pub struct ClipTokenizer {
    encoder: HashMap<String, u32>,
    decoder: Vec<String>,
    merge_ranks: HashMap<(String, String), usize>,
    byte_encoder: [char; 256],
    byte_decoder: HashMap<char, u8>,
    pattern: Regex,
    start_id: u32,
    end_id: u32,
}

impl std::fmt::Debug for ClipTokenizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClipTokenizer")
            .field("vocab_size", &self.decoder.len())
            .finish()
    }
}

/// GPT-2 style reversible map from bytes to printable characters, in
/// vocabulary order: printable bytes first, then the remapped rest.
fn bytes_to_unicode() -> Vec<(u8, char)> {
    let mut printable: Vec<u32> = (b'!' as u32..=b'~' as u32)
        .chain(0xA1..=0xAC)
        .chain(0xAE..=0xFF)
        .collect();
    let mut chars = printable.clone();
    let mut n = 0;
    for b in 0..256u32 {
        if !printable.contains(&b) {
            printable.push(b);
            chars.push(256 + n);
            n += 1;
        }
    }
    printable
        .into_iter()
        .zip(chars)
        .map(|(b, c)| (b as u8, char::from_u32(c).expect("valid code point")))
        .collect()
}

impl ClipTokenizer {
    /// Tokenizer backed by the bundled, checksum-verified vocabulary.
    pub fn bundled() -> Result<&'static ClipTokenizer> {
        static TOKENIZER: OnceLock<std::result::Result<ClipTokenizer, String>> = OnceLock::new();
        TOKENIZER
            .get_or_init(|| ClipTokenizer::from_gzip(VOCAB_GZ).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::Tokenizer(e.clone()))
    }

    /// Builds a tokenizer from a gzip-compressed merges file; the file must
    /// match the pinned checksum.
    pub fn from_gzip(bytes: &[u8]) -> Result<Self> {
        let digest = Sha256::digest(bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        if hex != VOCAB_SHA256 {
            return Err(Error::Tokenizer(format!(
                "vocabulary checksum mismatch: {hex}"
            )));
        }
        let mut text = String::new();
        GzDecoder::new(bytes)
            .read_to_string(&mut text)
            .map_err(|e| Error::Tokenizer(format!("cannot decompress vocabulary: {e}")))?;
        Self::from_merges(&text)
    }

    fn from_merges(text: &str) -> Result<Self> {
        let merges: Vec<(String, String)> = text
            .lines()
            .skip(1)
            .take(MERGE_COUNT)
            .map(|line| {
                let mut parts = line.split(' ');
                match (parts.next(), parts.next()) {
                    (Some(a), Some(b)) => Ok((a.to_string(), b.to_string())),
                    _ => Err(Error::Tokenizer(format!("malformed merge line {line:?}"))),
                }
            })
            .collect::<Result<_>>()?;
        if merges.len() != MERGE_COUNT {
            return Err(Error::Tokenizer(format!(
                "expected {MERGE_COUNT} merges, found {}",
                merges.len()
            )));
        }

        let ordered = bytes_to_unicode();
        let mut vocab: Vec<String> = ordered.iter().map(|(_, c)| c.to_string()).collect();
        vocab.extend(ordered.iter().map(|(_, c)| format!("{c}</w>")));
        vocab.extend(merges.iter().map(|(a, b)| format!("{a}{b}")));
        vocab.push(START_OF_TEXT.to_string());
        vocab.push(END_OF_TEXT.to_string());

        let encoder: HashMap<String, u32> = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let merge_ranks = merges.into_iter().enumerate().map(|(i, m)| (m, i)).collect();
        let mut byte_encoder = ['\0'; 256];
        for &(b, c) in &ordered {
            byte_encoder[b as usize] = c;
        }
        let byte_decoder = ordered.iter().map(|&(b, c)| (c, b)).collect();
        let pattern = Regex::new(
            r"(?i)<\|startoftext\|>|<\|endoftext\|>|'s|'t|'re|'ve|'m|'ll|'d|[\p{L}]+|[\p{N}]|[^\s\p{L}\p{N}]+",
        )
        .map_err(|e| Error::Tokenizer(e.to_string()))?;

        Ok(ClipTokenizer {
            start_id: encoder[START_OF_TEXT],
            end_id: encoder[END_OF_TEXT],
            encoder,
            decoder: vocab,
            merge_ranks,
            byte_encoder,
            byte_decoder,
            pattern,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.decoder.len()
    }

    pub fn start_of_text(&self) -> u32 {
        self.start_id
    }

    pub fn end_of_text(&self) -> u32 {
        self.end_id
    }

    fn bpe(&self, token: &str) -> Vec<String> {
        let mut word: Vec<String> = token.chars().map(String::from).collect();
        if let Some(last) = word.last_mut() {
            last.push_str("</w>");
        }
        while word.len() > 1 {
            let best = word
                .windows(2)
                .enumerate()
                .filter_map(|(i, pair)| {
                    self.merge_ranks
                        .get(&(pair[0].clone(), pair[1].clone()))
                        .map(|&rank| (rank, i))
                })
                .min();
            let Some((_, first)) = best else { break };
            let (a, b) = (word[first].clone(), word[first + 1].clone());
            let mut merged = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && word[i] == a && word[i + 1] == b {
                    merged.push(format!("{a}{b}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut word[i]));
                    i += 1;
                }
            }
            word = merged;
        }
        word
    }

    /// Content token ids for `text`, without start/end markers or padding.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let cleaned = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        let mut ids = Vec::new();
        for m in self.pattern.find_iter(&cleaned) {
            let mapped: String = m
                .as_str()
                .bytes()
                .map(|b| self.byte_encoder[b as usize])
                .collect();
            for piece in self.bpe(&mapped) {
                ids.push(self.encoder[&piece]);
            }
        }
        ids
    }

    /// Fixed-length sequence: start marker, up to 75 content ids, end marker,
    /// zero padding.
    pub fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        if text.trim().is_empty() {
            return Err(Error::EmptyInput("prompt text is empty"));
        }
        let mut content = self.encode(text);
        if content.len() > MAX_CONTENT_TOKENS {
            log::warn!(
                "prompt has {} tokens, truncating to {MAX_CONTENT_TOKENS}",
                content.len()
            );
            content.truncate(MAX_CONTENT_TOKENS);
        }
        let mut ids = [0u32; CONTEXT_LENGTH];
        ids[0] = self.start_id;
        ids[1..=content.len()].copy_from_slice(&content);
        ids[content.len() + 1] = self.end_id;
        Ok(TokenSequence {
            ids,
            attention_length: content.len() + 2,
        })
    }

    /// Inverse of [`encode`](Self::encode) up to whitespace: word-final
    /// markers become single spaces and the result is trimmed.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut text = String::new();
        for &id in ids {
            let token = self
                .decoder
                .get(id as usize)
                .ok_or_else(|| Error::Tokenizer(format!("unknown token id {id}")))?;
            text.push_str(token);
        }
        let bytes: Vec<u8> = text
            .replace("</w>", " ")
            .chars()
            .map(|c| {
                if c == ' ' {
                    b' '
                } else {
                    self.byte_decoder[&c]
                }
            })
            .collect();
        Ok(String::from_utf8_lossy(&bytes).trim_end().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok() -> &'static ClipTokenizer {
        ClipTokenizer::bundled().unwrap()
    }

    #[test]
    fn vocabulary_shape() {
        let t = tok();
        assert_eq!(t.vocab_size(), 49408);
        assert_eq!(t.start_of_text(), 49406);
        assert_eq!(t.end_of_text(), 49407);
    }

    #[test]
    fn checksum_is_enforced() {
        let mut corrupt = VOCAB_GZ.to_vec();
        corrupt[100] ^= 0xff;
        assert!(matches!(
            ClipTokenizer::from_gzip(&corrupt),
            Err(Error::Tokenizer(_))
        ));
    }

    #[test]
    fn short_prompt_layout() {
        let seq = tok().tokenize("a photo").unwrap();
        assert_eq!(seq.ids().len(), 77);
        assert_eq!(seq.attention_length(), 4);
        assert_eq!(&seq.ids()[..4], &[49406, 320, 1125, 49407]);
        assert!(seq.ids()[4..].iter().all(|&i| i == 0));
    }

    #[test]
    fn empty_prompt_rejected() {
        assert!(matches!(tok().tokenize(""), Err(Error::EmptyInput(_))));
        assert!(matches!(tok().tokenize("   \n"), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn prompt_round_trip() {
        let seq = tok().tokenize("A defective metal component").unwrap();
        assert_eq!(seq.content(), &[320, 4148, 9313, 4044, 21284]);
        assert_eq!(
            tok().decode(seq.content()).unwrap(),
            "a defective metal component"
        );
    }

    #[test]
    fn long_prompts_truncate() {
        let text = "metal ".repeat(120);
        let seq = tok().tokenize(&text).unwrap();
        assert_eq!(seq.attention_length(), 77);
        assert_eq!(seq.ids()[0], 49406);
        assert_eq!(seq.ids()[76], 49407);
    }
}
