use super::{DualEncoder, EncoderRole, SelectionError, Vector};

const NGRAM: usize = 3;

/// Offline encoder: lowercased character trigrams (with word-boundary padding)
/// hashed with a seed into a fixed number of signed buckets.
///
/// Both roles share the mapping, so the dot product approximates the number of
/// shared trigrams. Deterministic across runs and platforms.
#[derive(Clone, Debug)]
pub struct HashingEncoder {
    dimension: usize,
    seed: u64,
    id: String,
}

impl HashingEncoder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "encoder dimension must be positive");
        HashingEncoder { dimension, seed, id: format!("hashing-trigram-d{dimension}-s{seed}") }
    }

    fn bucket(&self, gram: &[char]) -> (usize, f64) {
        // FNV-1a over the UTF-8 bytes, seeded, then a splitmix64 finalizer
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let mut buf = [0u8; 4];
        for c in gram {
            for b in c.encode_utf8(&mut buf).bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h ^= h >> 30;
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 27;
        h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        ((h % self.dimension as u64) as usize, sign)
    }
}

impl DualEncoder for HashingEncoder {
    fn encoder_id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, _role: EncoderRole, text: &str) -> Result<Vector, SelectionError> {
        let mut v = vec![0.0; self.dimension];
        for word in text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            let padded: Vec<char> = std::iter::once('^')
                .chain(word.chars().flat_map(char::to_lowercase))
                .chain(std::iter::once('$'))
                .collect();
            for gram in padded.windows(NGRAM.min(padded.len())) {
                let (i, sign) = self.bucket(gram);
                v[i] += sign;
            }
        }
        Vector::new(v)
    }
}
