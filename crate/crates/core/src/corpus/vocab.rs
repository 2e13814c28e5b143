use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const NUM_SPECIALS: usize = 4;

const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Character-level vocabulary with the four reserved ids first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    id_of: HashMap<char, u32>,
    token_of: Vec<char>,
}

impl Vocab {
    /// Alphabet characters get ids `4..` in the order given.
    pub fn build(alphabet: &str) -> Result<Self> {
        if alphabet.is_empty() {
            return Err(Error::EmptyAlphabet);
        }
        let mut id_of = HashMap::new();
        let mut token_of = Vec::new();
        for c in alphabet.chars() {
            let id = (NUM_SPECIALS + token_of.len()) as u32;
            if id_of.insert(c, id).is_some() {
                return Err(Error::DuplicateCharacter(c));
            }
            token_of.push(c);
        }
        Ok(Self { id_of, token_of })
    }

    pub fn len(&self) -> usize {
        NUM_SPECIALS + self.token_of.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn alphabet(&self) -> String {
        self.token_of.iter().collect()
    }

    pub fn id_of(&self, c: char) -> Option<u32> {
        self.id_of.get(&c).copied()
    }

    /// Printable form of any id, including specials.
    pub fn token_of(&self, id: u32) -> Option<String> {
        let id = id as usize;
        if id < NUM_SPECIALS {
            Some(SPECIAL_TOKENS[id].to_string())
        } else {
            self.token_of.get(id - NUM_SPECIALS).map(|c| c.to_string())
        }
    }

    pub fn char_of(&self, id: u32) -> Option<char> {
        (id as usize).checked_sub(NUM_SPECIALS).and_then(|i| self.token_of.get(i).copied())
    }

    /// Character ids only, no BOS/EOS.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        text.chars().map(|c| self.id_of(c).ok_or(Error::UnknownCharacter(c))).collect()
    }

    /// `BOS text EOS`.
    pub fn encode_with_bounds(&self, text: &str) -> Result<Vec<u32>> {
        let mut ids = Vec::with_capacity(text.chars().count() + 2);
        ids.push(BOS);
        ids.extend(self.encode(text)?);
        ids.push(EOS);
        Ok(ids)
    }

    /// Joins character ids, skipping specials.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter().filter_map(|&id| self.char_of(id)).collect()
    }
}
