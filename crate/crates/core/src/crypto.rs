//! Keyed hashing, pseudonyms, bit-field projections and the MAC-style
//! signature stand-in used by RSUs and the trust authority.
//!
//! The keyed hash is `SHA-1(key || data)`. Coarse values are read from the
//! first-stage digest `H(k_c, pseudonym)`; fine values from the second-stage
//! digest `H(k_f, H(k_c, pseudonym))`. Bits are numbered from the least
//! significant bit of the digest read as a big-endian integer, so bit 0 is the
//! low bit of the last byte.

use std::collections::BTreeMap;
use std::fmt;

use hmac::{Hmac, Mac};
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha1::digest::generic_array::GenericArray;
use sha1::{Digest, Sha1};
use sha2::Sha256;
use thiserror::Error;

pub const DIGEST_LEN: usize = 20;
pub const DEFAULT_KEY_LEN: usize = 32;
pub const DEFAULT_PSEUDONYM_LEN: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("invalid key: {0}")]
    InvalidKey(&'static str),
    #[error("bit range [{offset}, {end}) does not fit a {available}-bit digest or exceeds 32 bits")]
    Range { offset: u32, end: u32, available: u32 },
    #[error("key has role {actual:?}, expected {expected:?}")]
    WrongKeyRole { expected: KeyRole, actual: KeyRole },
    #[error("unknown signer {0}")]
    UnknownSigner(String),
}

fn hex_serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&hex::encode(bytes))
}

fn hex_deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
    let s = String::deserialize(d)?;
    hex::decode(s).map_err(serde::de::Error::custom)
}

/// Opaque pseudonym bytes. Byte equality is the only identity relation.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pseudonym(Vec<u8>);

impl Pseudonym {
    pub fn new(bytes: Vec<u8>) -> Self {
        Pseudonym(bytes)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        hex::decode(s).map(Pseudonym)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }
}

impl fmt::Debug for Pseudonym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Pseudonym({})", self.to_hex())
    }
}

impl fmt::Display for Pseudonym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Pseudonym {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        hex_serialize(&self.0, s)
    }
}

impl<'de> Deserialize<'de> for Pseudonym {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        hex_deserialize(d).map(Pseudonym)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KeyRole {
    /// `k_c`, distributed to every RSU/RSB.
    GlobalCoarse,
    /// `k_f`, held only by the DMV.
    DmvFine,
}

#[derive(Clone, PartialEq, Eq)]
pub struct HashKey {
    role: KeyRole,
    bytes: Vec<u8>,
}

impl HashKey {
    pub fn new(role: KeyRole, bytes: Vec<u8>) -> Result<Self, CryptoError> {
        if bytes.is_empty() {
            return Err(CryptoError::InvalidKey("key bytes must be non-empty"));
        }
        Ok(HashKey { role, bytes })
    }

    pub fn random<R: RngCore>(role: KeyRole, rng: &mut R) -> Self {
        let mut bytes = vec![0u8; DEFAULT_KEY_LEN];
        rng.fill_bytes(&mut bytes);
        HashKey { role, bytes }
    }

    pub fn role(&self) -> KeyRole {
        self.role
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }
}

impl fmt::Debug for HashKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HashKey").field("role", &self.role).field("bytes", &"[REDACTED]").finish()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct KeyedDigest(pub [u8; DIGEST_LEN]);

impl KeyedDigest {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for KeyedDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyedDigest({})", hex::encode(self.0))
    }
}

/// `SHA-1(key || data)`.
pub fn keyed_hash(key: &HashKey, data: &[u8]) -> KeyedDigest {
    let out = Sha1::new().chain_update(&key.bytes).chain_update(data).finalize();
    KeyedDigest(out.into())
}

const SHA1_IV: [u32; 5] = [0x6745_2301, 0xEFCD_AB89, 0x98BA_DCFE, 0x1032_5476, 0xC3D2_E1F0];

/// Single-block keyed SHA-1 for fixed-length inputs.
///
/// When `key.len() + data_len <= 55` the whole padded message fits one
/// compression block, so the key and padding are laid out once and each call
/// only copies `data` in. Falls back to [`keyed_hash`] otherwise.
#[derive(Clone)]
pub(crate) struct BlockHasher {
    key: HashKey,
    template: Option<[u8; 64]>,
    data_len: usize,
}

impl BlockHasher {
    pub(crate) fn new(key: &HashKey, data_len: usize) -> Self {
        let key_len = key.bytes.len();
        let template = (key_len + data_len <= 55).then(|| {
            let mut block = [0u8; 64];
            block[..key_len].copy_from_slice(&key.bytes);
            block[key_len + data_len] = 0x80;
            let bits = ((key_len + data_len) as u64) * 8;
            block[56..].copy_from_slice(&bits.to_be_bytes());
            block
        });
        BlockHasher { key: key.clone(), template, data_len }
    }

    pub(crate) fn hash(&self, data: &[u8]) -> KeyedDigest {
        match &self.template {
            Some(template) if data.len() == self.data_len => {
                let mut block = *template;
                let key_len = self.key.bytes.len();
                block[key_len..key_len + data.len()].copy_from_slice(data);
                let mut state = SHA1_IV;
                sha1::compress(&mut state, std::slice::from_ref(GenericArray::from_slice(&block)));
                let mut out = [0u8; DIGEST_LEN];
                for (chunk, word) in out.chunks_exact_mut(4).zip(state) {
                    chunk.copy_from_slice(&word.to_be_bytes());
                }
                KeyedDigest(out)
            }
            _ => keyed_hash(&self.key, data),
        }
    }
}

/// A contiguous run of digest bits, `[offset, offset + width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitRange {
    pub offset: u32,
    pub width: u32,
}

impl BitRange {
    pub const fn new(offset: u32, width: u32) -> Self {
        BitRange { offset, width }
    }

    pub fn end(&self) -> u32 {
        self.offset + self.width
    }

    pub fn check(&self, digest_bits: u32) -> Result<(), CryptoError> {
        if self.width == 0 || self.width > 32 || self.end() > digest_bits {
            return Err(CryptoError::Range { offset: self.offset, end: self.end(), available: digest_bits });
        }
        Ok(())
    }
}

/// Reads `range` out of `digest` interpreted as a big-endian integer.
pub fn extract_bits(digest: &[u8], range: BitRange) -> Result<u32, CryptoError> {
    range.check(digest.len() as u32 * 8)?;
    let mask = if range.width == 32 { u32::MAX } else { (1u32 << range.width) - 1 };
    if range.end() <= 128 && digest.len() >= 16 {
        let mut low = [0u8; 16];
        low.copy_from_slice(&digest[digest.len() - 16..]);
        return Ok((u128::from_be_bytes(low) >> range.offset) as u32 & mask);
    }
    let mut value = 0u32;
    for j in 0..range.width {
        let bit = range.offset + j;
        let byte = digest[digest.len() - 1 - (bit / 8) as usize];
        value |= u32::from((byte >> (bit % 8)) & 1) << j;
    }
    Ok(value)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoarseValue(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FineValue(pub u32);

pub fn extract_coarse(digest: &[u8], selector: BitRange) -> Result<CoarseValue, CryptoError> {
    extract_bits(digest, selector).map(CoarseValue)
}

pub fn extract_fine(digest: &[u8], selector: BitRange) -> Result<FineValue, CryptoError> {
    extract_bits(digest, selector).map(FineValue)
}

/// Selectors for both hash stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashParams {
    pub coarse: BitRange,
    pub fine: BitRange,
}

impl HashParams {
    /// Coarse bits `[0, w_c)` of stage one, fine bits `[w_c, w_c + w_f)` of stage two.
    pub fn with_widths(w_c: u32, w_f: u32) -> Result<Self, CryptoError> {
        let params = HashParams { coarse: BitRange::new(0, w_c), fine: BitRange::new(w_c, w_f) };
        params.check()?;
        Ok(params)
    }

    pub fn check(&self) -> Result<(), CryptoError> {
        self.coarse.check(DIGEST_LEN as u32 * 8)?;
        self.fine.check(DIGEST_LEN as u32 * 8)
    }

    pub fn w_c(&self) -> u32 {
        self.coarse.width
    }

    pub fn w_f(&self) -> u32 {
        self.fine.width
    }

    pub fn is_default_layout(&self) -> bool {
        self.coarse.offset == 0 && self.fine.offset == self.coarse.width
    }
}

impl Default for HashParams {
    fn default() -> Self {
        HashParams { coarse: BitRange::new(0, 8), fine: BitRange::new(8, 16) }
    }
}

/// The only hashing capability handed to RSUs: `k_c` plus the coarse selector.
#[derive(Clone, Debug)]
pub struct CoarseHasher {
    key: HashKey,
    selector: BitRange,
}

impl CoarseHasher {
    pub fn new(key: HashKey, selector: BitRange) -> Result<Self, CryptoError> {
        if key.role() != KeyRole::GlobalCoarse {
            return Err(CryptoError::WrongKeyRole { expected: KeyRole::GlobalCoarse, actual: key.role() });
        }
        selector.check(DIGEST_LEN as u32 * 8)?;
        Ok(CoarseHasher { key, selector })
    }

    pub fn stage_one(&self, pseudonym: &Pseudonym) -> KeyedDigest {
        keyed_hash(&self.key, pseudonym.as_bytes())
    }

    pub fn coarse(&self, pseudonym: &Pseudonym) -> CoarseValue {
        self.coarse_of_digest(&self.stage_one(pseudonym))
    }

    pub fn selector(&self) -> BitRange {
        self.selector
    }

    pub(crate) fn key(&self) -> &HashKey {
        &self.key
    }

    pub(crate) fn coarse_of_digest(&self, digest: &KeyedDigest) -> CoarseValue {
        // selector was range-checked against the digest width in `new`
        CoarseValue(extract_bits(&digest.0, self.selector).expect("checked selector"))
    }
}

/// DMV key material: both keys and both selectors.
#[derive(Clone, Debug)]
pub struct DmvKeys {
    coarse: CoarseHasher,
    fine_key: HashKey,
    fine_selector: BitRange,
}

impl DmvKeys {
    pub fn new(k_c: HashKey, k_f: HashKey, params: HashParams) -> Result<Self, CryptoError> {
        if k_f.role() != KeyRole::DmvFine {
            return Err(CryptoError::WrongKeyRole { expected: KeyRole::DmvFine, actual: k_f.role() });
        }
        params.check()?;
        Ok(DmvKeys { coarse: CoarseHasher::new(k_c, params.coarse)?, fine_key: k_f, fine_selector: params.fine })
    }

    pub fn generate<R: RngCore>(params: HashParams, rng: &mut R) -> Result<Self, CryptoError> {
        let k_c = HashKey::random(KeyRole::GlobalCoarse, rng);
        let k_f = HashKey::random(KeyRole::DmvFine, rng);
        DmvKeys::new(k_c, k_f, params)
    }

    /// The share of key material an RSU receives.
    pub fn coarse_hasher(&self) -> &CoarseHasher {
        &self.coarse
    }

    pub fn params(&self) -> HashParams {
        HashParams { coarse: self.coarse.selector, fine: self.fine_selector }
    }

    pub fn fine_key(&self) -> &HashKey {
        &self.fine_key
    }

    pub fn fine(&self, pseudonym: &Pseudonym) -> FineValue {
        self.classify(pseudonym).1
    }

    /// Recomputes both projections from scratch.
    pub fn classify(&self, pseudonym: &Pseudonym) -> (CoarseValue, FineValue) {
        let stage_one = self.coarse.stage_one(pseudonym);
        let stage_two = keyed_hash(&self.fine_key, &stage_one.0);
        (
            self.coarse.coarse_of_digest(&stage_one),
            FineValue(extract_bits(&stage_two.0, self.fine_selector).expect("checked selector")),
        )
    }
}

/// Entity identifier for anything that signs: `rsu-N` or `ta`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SignerId(pub String);

impl SignerId {
    pub fn new(id: impl Into<String>) -> Self {
        SignerId(id.into())
    }
}

impl fmt::Display for SignerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Signature(Vec<u8>);

impl Signature {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Signature(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", hex::encode(&self.0))
    }
}

impl Serialize for Signature {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        hex_serialize(&self.0, s)
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        hex_deserialize(d).map(Signature)
    }
}

type HmacSha256 = Hmac<Sha256>;

fn mac_tag(secret: &[u8], message: &[u8]) -> HmacSha256 {
    let mut mac = HmacSha256::new_from_slice(secret).expect("HMAC accepts any key length");
    mac.update(message);
    mac
}

/// Per-signer secret. Tags are HMAC-SHA256 over the message.
#[derive(Clone)]
pub struct SignatureKeyPair {
    signer_id: SignerId,
    secret: Vec<u8>,
}

impl SignatureKeyPair {
    pub fn new(signer_id: SignerId, secret: Vec<u8>) -> Result<Self, CryptoError> {
        if secret.is_empty() {
            return Err(CryptoError::InvalidKey("signing secret must be non-empty"));
        }
        Ok(SignatureKeyPair { signer_id, secret })
    }

    pub fn generate<R: RngCore>(signer_id: SignerId, rng: &mut R) -> Self {
        let mut secret = vec![0u8; DEFAULT_KEY_LEN];
        rng.fill_bytes(&mut secret);
        SignatureKeyPair { signer_id, secret }
    }

    pub fn signer_id(&self) -> &SignerId {
        &self.signer_id
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(mac_tag(&self.secret, message).finalize().into_bytes().to_vec())
    }
}

impl fmt::Debug for SignatureKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SignatureKeyPair").field("signer_id", &self.signer_id).field("secret", &"[REDACTED]").finish()
    }
}

/// TA-held registry of signer secrets.
#[derive(Clone, Default)]
pub struct KeyDirectory {
    secrets: BTreeMap<SignerId, Vec<u8>>,
}

impl KeyDirectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, keypair: &SignatureKeyPair) {
        self.secrets.insert(keypair.signer_id.clone(), keypair.secret.clone());
    }

    pub fn contains(&self, signer: &SignerId) -> bool {
        self.secrets.contains_key(signer)
    }

    pub fn signers(&self) -> impl Iterator<Item = &SignerId> {
        self.secrets.keys()
    }

    pub fn verify(&self, signer: &SignerId, message: &[u8], signature: &Signature) -> Result<bool, CryptoError> {
        let secret = self.secrets.get(signer).ok_or_else(|| CryptoError::UnknownSigner(signer.0.clone()))?;
        Ok(mac_tag(secret, message).verify_slice(&signature.0).is_ok())
    }
}

impl fmt::Debug for KeyDirectory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.secrets.keys()).finish()
    }
}
