//! Emulated permissioned blockchain gating access to the offloading
//! service.
//!
//! A policy table maps registered public keys to the device identifiers
//! they own. Devices submit signed offload requests; a request is granted
//! only if its signature verifies, its sender key is registered, and the
//! named device belongs to that key. Denials emit a penalty notice signed
//! by the table authority so that every verdict leaves a committed record.
//!
//! Blocks are mined by a fixed round-robin set of authority miners over a
//! first-come first-served pool. Timestamps are logical (a counter), so
//! identical inputs produce byte-identical ledgers.
//!
//! ## Byte layouts
//!
//! Transaction signing preimage, in order: `kind` (1 byte), `sender_pk`
//! (32), `device_id` (u32 LE length + bytes), `payload` (32), `nonce`
//! (u64 LE). The wire form appends the 64-byte signature. Block header
//! bytes are `height` (u64 LE), `prev_hash` (32), `tx_root` (32),
//! `timestamp` (u64 LE), `miner_id` (u32 LE length + bytes); the block
//! hash is SHA-256 of exactly those bytes. `tx_root` is SHA-256 over the
//! length-prefixed wire forms of the block's transactions in order. The
//! ledger file is a `MECCOLEDGER1` magic line, the miner roster, then one
//! length-prefixed block record per block, appended as blocks are mined.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type PublicKey = [u8; 32];
pub type Hash32 = [u8; 32];

const LEDGER_MAGIC: &[u8] = b"MECCOLEDGER1\n";

// ---- accounts and transactions ----

/// Key pair plus the sender-side nonce counter.
pub struct Account {
    signing: SigningKey,
    public: PublicKey,
    next_nonce: u64,
}

impl Account {
    /// Derive a key pair deterministically from a seed.
    pub fn from_seed(seed: u64) -> Account {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut secret = [0u8; 32];
        rng.fill_bytes(&mut secret);
        let signing = SigningKey::from_bytes(&secret);
        let public = signing.verifying_key().to_bytes();
        Account { signing, public, next_nonce: 0 }
    }

    pub fn public_key(&self) -> PublicKey {
        self.public
    }

    /// Override the nonce counter, for example after counting committed
    /// transactions on a reloaded ledger.
    pub fn set_next_nonce(&mut self, nonce: u64) {
        self.next_nonce = nonce;
    }

    fn sign_tx(&mut self, kind: TxKind, device_id: &str, payload: Hash32) -> Result<Transaction> {
        if device_id.is_empty() {
            return Err(Error::Domain("device_id must not be empty".into()));
        }
        let mut tx = Transaction {
            kind,
            sender_pk: self.public,
            device_id: device_id.to_string(),
            payload,
            nonce: self.next_nonce,
            signature: [0u8; 64],
        };
        tx.signature = self.signing.sign(&tx.preimage()).to_bytes();
        self.next_nonce += 1;
        Ok(tx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxKind {
    OffloadRequest,
    Registration,
    PenaltyNotice,
}

impl TxKind {
    fn to_byte(self) -> u8 {
        match self {
            TxKind::OffloadRequest => 0,
            TxKind::Registration => 1,
            TxKind::PenaltyNotice => 2,
        }
    }

    fn from_byte(b: u8, offset: usize) -> Result<TxKind> {
        match b {
            0 => Ok(TxKind::OffloadRequest),
            1 => Ok(TxKind::Registration),
            2 => Ok(TxKind::PenaltyNotice),
            _ => Err(Error::Decode { offset, message: format!("unknown transaction kind {b}") }),
        }
    }
}

impl std::fmt::Display for TxKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TxKind::OffloadRequest => "offload_request",
            TxKind::Registration => "registration",
            TxKind::PenaltyNotice => "penalty_notice",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub kind: TxKind,
    pub sender_pk: PublicKey,
    pub device_id: String,
    pub payload: Hash32,
    pub nonce: u64,
    pub signature: [u8; 64],
}

impl Transaction {
    fn preimage(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(81 + self.device_id.len());
        out.push(self.kind.to_byte());
        out.extend_from_slice(&self.sender_pk);
        out.extend_from_slice(&(self.device_id.len() as u32).to_le_bytes());
        out.extend_from_slice(self.device_id.as_bytes());
        out.extend_from_slice(&self.payload);
        out.extend_from_slice(&self.nonce.to_le_bytes());
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.preimage();
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn from_bytes(bytes: &[u8], base_offset: usize) -> Result<Transaction> {
        let mut r = Reader { bytes, pos: 0, base: base_offset };
        let kind = TxKind::from_byte(r.u8()?, base_offset)?;
        let sender_pk = r.array::<32>()?;
        let id_len = r.u32()? as usize;
        let device_id = String::from_utf8(r.take(id_len)?.to_vec()).map_err(|_| Error::Decode {
            offset: base_offset,
            message: "device_id is not valid UTF-8".into(),
        })?;
        let payload = r.array::<32>()?;
        let nonce = r.u64()?;
        let signature = r.array::<64>()?;
        r.finish()?;
        Ok(Transaction { kind, sender_pk, device_id, payload, nonce, signature })
    }

    /// Check the signature against the embedded sender key.
    pub fn signature_valid(&self) -> bool {
        let Ok(key) = VerifyingKey::from_bytes(&self.sender_pk) else {
            return false;
        };
        let sig = Signature::from_bytes(&self.signature);
        key.verify_strict(&self.preimage(), &sig).is_ok()
    }
}

/// Sender key of a transaction. Deliberately independent of signature
/// verification: callers inspect who claims to have sent a transaction
/// before (and regardless of) deciding whether the claim holds.
pub fn get_sender_public_key(tx: &Transaction) -> PublicKey {
    tx.sender_pk
}

/// Digest helper for transaction payloads.
pub fn payload_digest(content: &[u8]) -> Hash32 {
    Sha256::digest(content).into()
}

/// Build a signed offload request for one device. Consumes one nonce.
pub fn build_offload_tx(
    account: &mut Account,
    device_id: &str,
    payload: Hash32,
) -> Result<Transaction> {
    account.sign_tx(TxKind::OffloadRequest, device_id, payload)
}

// ---- policy table (the access-control contract) ----

/// Contract state: which device identifiers each registered key may use.
/// Mutations require the admin account; lookups are open.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyTable {
    admin_pk: PublicKey,
    entries: BTreeMap<PublicKey, BTreeSet<String>>,
}

impl PolicyTable {
    pub fn new(admin_pk: PublicKey) -> PolicyTable {
        PolicyTable { admin_pk, entries: BTreeMap::new() }
    }

    pub fn admin_pk(&self) -> PublicKey {
        self.admin_pk
    }

    pub fn contains(&self, pk: &PublicKey, device_id: &str) -> bool {
        self.entries.get(pk).is_some_and(|devices| devices.contains(device_id))
    }

    pub fn is_registered(&self, pk: &PublicKey) -> bool {
        self.entries.contains_key(pk)
    }

    /// Number of registered owner keys.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Canonical serialization: admin key, then entries in key order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.admin_pk);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (pk, devices) in &self.entries {
            out.extend_from_slice(pk);
            out.extend_from_slice(&(devices.len() as u32).to_le_bytes());
            for d in devices {
                out.extend_from_slice(&(d.len() as u32).to_le_bytes());
                out.extend_from_slice(d.as_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<PolicyTable> {
        let mut r = Reader { bytes, pos: 0, base: 0 };
        let admin_pk = r.array::<32>()?;
        let n_entries = r.u32()? as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..n_entries {
            let pk = r.array::<32>()?;
            let n_devices = r.u32()? as usize;
            let mut devices = BTreeSet::new();
            for _ in 0..n_devices {
                let len = r.u32()? as usize;
                let d = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Decode {
                    offset: r.pos,
                    message: "device_id is not valid UTF-8".into(),
                })?;
                devices.insert(d);
            }
            entries.insert(pk, devices);
        }
        r.finish()?;
        Ok(PolicyTable { admin_pk, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PolicyTable> {
        PolicyTable::from_bytes(&std::fs::read(path)?)
    }
}

fn require_admin(table: &PolicyTable, admin: &Account, action: &str) -> Result<()> {
    if admin.public != table.admin_pk {
        return Err(Error::Unauthorized(format!(
            "{action} requires the policy table admin key"
        )));
    }
    Ok(())
}

/// Register `device_id` under `subject_pk`. Idempotent; returns a signed
/// registration transaction recording the mutation. Admin only.
pub fn contract_add_md(
    table: &mut PolicyTable,
    admin: &mut Account,
    subject_pk: PublicKey,
    device_id: &str,
) -> Result<Transaction> {
    require_admin(table, admin, "AddMD")?;
    if device_id.is_empty() {
        return Err(Error::Domain("device_id must not be empty".into()));
    }
    table.entries.entry(subject_pk).or_default().insert(device_id.to_string());
    let mut content = b"add-md".to_vec();
    content.extend_from_slice(&subject_pk);
    content.extend_from_slice(device_id.as_bytes());
    admin.sign_tx(TxKind::Registration, device_id, payload_digest(&content))
}

/// Remove `subject_pk` and every device registered under it. Deleting an
/// absent key is a no-op. Admin only.
pub fn contract_delete_md(
    table: &mut PolicyTable,
    admin: &mut Account,
    subject_pk: PublicKey,
) -> Result<Transaction> {
    require_admin(table, admin, "DeleteMD")?;
    table.entries.remove(&subject_pk);
    let mut content = b"delete-md".to_vec();
    content.extend_from_slice(&subject_pk);
    admin.sign_tx(TxKind::Registration, "policy-table", payload_digest(&content))
}

/// Outcome of an access check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessResult {
    pub granted: bool,
    /// "Successful!" on grant, "Failed" on denial.
    pub message: String,
    /// Penalty notice, present exactly when the request was denied.
    pub penalty: Option<Transaction>,
}

/// Check an offload request against the policy table. Granted only when
/// the signature verifies, the sender key is registered, and the named
/// device belongs to that key. A denial emits one penalty notice signed by
/// `authority` so the verdict can be committed to the ledger.
pub fn verify_request(
    tx: &Transaction,
    table: &PolicyTable,
    authority: &mut Account,
) -> Result<AccessResult> {
    let sender = get_sender_public_key(tx);
    let granted =
        tx.signature_valid() && table.is_registered(&sender) && table.contains(&sender, &tx.device_id);
    if granted {
        Ok(AccessResult { granted: true, message: "Successful!".into(), penalty: None })
    } else {
        let mut content = b"penalty".to_vec();
        content.extend_from_slice(&sender);
        content.extend_from_slice(tx.device_id.as_bytes());
        content.extend_from_slice(b"Failed");
        let penalty =
            authority.sign_tx(TxKind::PenaltyNotice, &tx.device_id, payload_digest(&content))?;
        Ok(AccessResult { granted: false, message: "Failed".into(), penalty: Some(penalty) })
    }
}

// ---- blocks and the chain ----

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Hash32,
    pub tx_root: Hash32,
    pub timestamp: u64,
    pub miner_id: String,
    pub hash: Hash32,
    pub transactions: Vec<Transaction>,
}

impl Block {
    fn header_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.prev_hash);
        out.extend_from_slice(&self.tx_root);
        out.extend_from_slice(&self.timestamp.to_le_bytes());
        out.extend_from_slice(&(self.miner_id.len() as u32).to_le_bytes());
        out.extend_from_slice(self.miner_id.as_bytes());
        out
    }

    fn compute_hash(&self) -> Hash32 {
        Sha256::digest(self.header_bytes()).into()
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header_bytes();
        out.extend_from_slice(&self.hash);
        out.extend_from_slice(&(self.transactions.len() as u32).to_le_bytes());
        for tx in &self.transactions {
            let bytes = tx.to_bytes();
            out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
            out.extend_from_slice(&bytes);
        }
        out
    }

    fn from_bytes(bytes: &[u8], base_offset: usize) -> Result<Block> {
        let mut r = Reader { bytes, pos: 0, base: base_offset };
        let height = r.u64()?;
        let prev_hash = r.array::<32>()?;
        let tx_root = r.array::<32>()?;
        let timestamp = r.u64()?;
        let miner_len = r.u32()? as usize;
        let miner_id =
            String::from_utf8(r.take(miner_len)?.to_vec()).map_err(|_| Error::Decode {
                offset: base_offset + r.pos,
                message: "miner_id is not valid UTF-8".into(),
            })?;
        let hash = r.array::<32>()?;
        let tx_count = r.u32()? as usize;
        let mut transactions = Vec::with_capacity(tx_count);
        for _ in 0..tx_count {
            let len = r.u32()? as usize;
            let start = r.pos;
            let tx_bytes = r.take(len)?;
            transactions.push(Transaction::from_bytes(tx_bytes, base_offset + start)?);
        }
        r.finish()?;
        Ok(Block { height, prev_hash, tx_root, timestamp, miner_id, hash, transactions })
    }
}

fn tx_root_of(txs: &[Transaction]) -> Hash32 {
    let mut hasher = Sha256::new();
    for tx in txs {
        let bytes = tx.to_bytes();
        hasher.update((bytes.len() as u32).to_le_bytes());
        hasher.update(&bytes);
    }
    hasher.finalize().into()
}

/// Outcome of one mining round.
#[derive(Debug)]
pub struct MineOutcome {
    /// Mined block, or `None` when the pool held nothing valid.
    pub block: Option<Block>,
    /// Transactions dropped for invalid signatures or stale nonces.
    pub rejected: Vec<Transaction>,
}

/// The ledger: a linked chain of blocks plus the authority miner roster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    blocks: Vec<Block>,
    miners: Vec<String>,
    clock: u64,
}

impl Chain {
    /// Fresh chain holding only the genesis block.
    pub fn new(miners: Vec<String>) -> Result<Chain> {
        if miners.is_empty() {
            return Err(Error::Domain("at least one miner is required".into()));
        }
        let mut genesis = Block {
            height: 0,
            prev_hash: [0u8; 32],
            tx_root: tx_root_of(&[]),
            timestamp: 0,
            miner_id: "genesis".into(),
            hash: [0u8; 32],
            transactions: Vec::new(),
        };
        genesis.hash = genesis.compute_hash();
        Ok(Chain { blocks: vec![genesis], miners, clock: 1 })
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64 - 1
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn tip_hash(&self) -> Hash32 {
        self.blocks.last().expect("chain always has genesis").hash
    }

    /// All committed transactions in chain order.
    pub fn transactions(&self) -> impl Iterator<Item = &Transaction> {
        self.blocks.iter().flat_map(|b| b.transactions.iter())
    }

    /// Number of committed transactions sent by `pk`; doubles as the next
    /// nonce for that sender.
    pub fn committed_count(&self, pk: &PublicKey) -> u64 {
        self.transactions().filter(|tx| &tx.sender_pk == pk).count() as u64
    }

    fn next_miner(&self) -> String {
        let idx = self.height() as usize % self.miners.len();
        self.miners[idx].clone()
    }

    /// Mine the pool into a new block, first come first served. Invalid
    /// transactions (bad signature, replayed or out-of-order nonce) are
    /// rejected and reported; the valid remainder is mined. An effectively
    /// empty pool yields no block.
    pub fn mine_block(&mut self, pool: Vec<Transaction>) -> MineOutcome {
        let mut accepted: Vec<Transaction> = Vec::new();
        let mut rejected = Vec::new();
        for tx in pool {
            let expected = self.committed_count(&tx.sender_pk)
                + accepted.iter().filter(|t| t.sender_pk == tx.sender_pk).count() as u64;
            if tx.signature_valid() && tx.nonce == expected {
                accepted.push(tx);
            } else {
                rejected.push(tx);
            }
        }
        if accepted.is_empty() {
            return MineOutcome { block: None, rejected };
        }
        let mut block = Block {
            height: self.height() + 1,
            prev_hash: self.tip_hash(),
            tx_root: tx_root_of(&accepted),
            timestamp: self.clock,
            miner_id: self.next_miner(),
            hash: [0u8; 32],
            transactions: accepted,
        };
        block.hash = block.compute_hash();
        self.clock += 1;
        self.blocks.push(block);
        MineOutcome { block: Some(self.blocks.last().expect("just pushed").clone()), rejected }
    }

    /// Full re-verification of the chain: genesis shape, height sequence,
    /// hash links, block hashes, transaction roots, signatures, round-robin
    /// miner assignment, strictly increasing timestamps, and strictly
    /// increasing per-sender nonces.
    pub fn verify(&self) -> bool {
        let Some(genesis) = self.blocks.first() else { return false };
        if genesis.height != 0
            || genesis.prev_hash != [0u8; 32]
            || !genesis.transactions.is_empty()
            || genesis.tx_root != tx_root_of(&[])
            || genesis.hash != genesis.compute_hash()
        {
            return false;
        }
        let mut last_timestamp = genesis.timestamp;
        let mut nonces: BTreeMap<PublicKey, u64> = BTreeMap::new();
        for (i, block) in self.blocks.iter().enumerate().skip(1) {
            if block.height != i as u64 {
                return false;
            }
            if block.prev_hash != self.blocks[i - 1].hash {
                return false;
            }
            if block.tx_root != tx_root_of(&block.transactions) {
                return false;
            }
            if block.hash != block.compute_hash() {
                return false;
            }
            if block.miner_id != self.miners[(i - 1) % self.miners.len()] {
                return false;
            }
            if block.timestamp <= last_timestamp {
                return false;
            }
            last_timestamp = block.timestamp;
            if block.transactions.is_empty() {
                return false;
            }
            for tx in &block.transactions {
                if !tx.signature_valid() {
                    return false;
                }
                let expected = nonces.entry(tx.sender_pk).or_insert(0);
                if tx.nonce != *expected {
                    return false;
                }
                *expected += 1;
            }
        }
        true
    }

    // ---- persistence ----

    /// Write the whole chain to `path`, replacing any existing file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(LEDGER_MAGIC)?;
        file.write_all(&(self.miners.len() as u32).to_le_bytes())?;
        for m in &self.miners {
            file.write_all(&(m.len() as u32).to_le_bytes())?;
            file.write_all(m.as_bytes())?;
        }
        for block in &self.blocks {
            let bytes = block.to_bytes();
            file.write_all(&(bytes.len() as u32).to_le_bytes())?;
            file.write_all(&bytes)?;
        }
        Ok(())
    }

    /// Append blocks beyond `from_height` to an existing ledger file.
    pub fn append_to(&self, path: &Path, from_height: u64) -> Result<()> {
        let mut file = std::fs::OpenOptions::new().append(true).open(path)?;
        for block in &self.blocks {
            if block.height > from_height {
                let bytes = block.to_bytes();
                file.write_all(&(bytes.len() as u32).to_le_bytes())?;
                file.write_all(&bytes)?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Chain> {
        let bytes = std::fs::read(path)?;
        let mut r = Reader { bytes: &bytes, pos: 0, base: 0 };
        if r.take(LEDGER_MAGIC.len())? != LEDGER_MAGIC {
            return Err(Error::Decode { offset: 0, message: "not a ledger file".into() });
        }
        let n_miners = r.u32()? as usize;
        let mut miners = Vec::with_capacity(n_miners);
        for _ in 0..n_miners {
            let len = r.u32()? as usize;
            let m = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Decode {
                offset: r.pos,
                message: "miner_id is not valid UTF-8".into(),
            })?;
            miners.push(m);
        }
        if miners.is_empty() {
            return Err(Error::Decode { offset: r.pos, message: "empty miner roster".into() });
        }
        let mut blocks = Vec::new();
        while r.pos < bytes.len() {
            let len = r.u32()? as usize;
            let start = r.pos;
            let block_bytes = r.take(len)?;
            blocks.push(Block::from_bytes(block_bytes, start)?);
        }
        if blocks.is_empty() {
            return Err(Error::Decode { offset: r.pos, message: "ledger has no blocks".into() });
        }
        let clock = blocks.last().expect("nonempty").timestamp + 1;
        Ok(Chain { blocks, miners, clock })
    }
}

// ---- bounds-checked little-endian reader ----

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Decode {
                offset: self.base + self.pos,
                message: format!("expected {n} more bytes, found {}", self.bytes.len() - self.pos),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("length checked")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("length checked")))
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Decode {
                offset: self.base + self.pos,
                message: format!("{} trailing bytes", self.bytes.len() - self.pos),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{HashMap, HashSet};

    fn test_chain() -> Chain {
        Chain::new(vec!["m0".into(), "m1".into(), "m2".into()]).unwrap()
    }

    #[test]
    fn accounts_are_deterministic_per_seed() {
        let a = Account::from_seed(7);
        let b = Account::from_seed(7);
        let c = Account::from_seed(8);
        assert_eq!(a.public_key(), b.public_key());
        assert_ne!(a.public_key(), c.public_key());
    }

    #[test]
    fn signed_transactions_verify_and_tampering_breaks_them() {
        let mut acc = Account::from_seed(1);
        let tx = build_offload_tx(&mut acc, "md-0", payload_digest(b"task")).unwrap();
        assert!(tx.signature_valid());

        let mut forged = tx.clone();
        forged.device_id = "md-1".into();
        assert!(!forged.signature_valid());

        let mut bad_sig = tx.clone();
        bad_sig.signature[0] ^= 1;
        assert!(!bad_sig.signature_valid());
    }

    #[test]
    fn nonces_increment_per_account() {
        let mut acc = Account::from_seed(2);
        let a = build_offload_tx(&mut acc, "md-0", [0u8; 32]).unwrap();
        let b = build_offload_tx(&mut acc, "md-0", [0u8; 32]).unwrap();
        assert_eq!(a.nonce, 0);
        assert_eq!(b.nonce, 1);
    }

    #[test]
    fn empty_device_id_is_rejected() {
        let mut acc = Account::from_seed(3);
        assert!(matches!(build_offload_tx(&mut acc, "", [0u8; 32]), Err(Error::Domain(_))));
    }

    #[test]
    fn transaction_bytes_round_trip_and_truncation_fails() {
        let mut acc = Account::from_seed(4);
        let tx = build_offload_tx(&mut acc, "md-7", payload_digest(b"p")).unwrap();
        let bytes = tx.to_bytes();
        let back = Transaction::from_bytes(&bytes, 0).unwrap();
        assert_eq!(back, tx);

        let err = Transaction::from_bytes(&bytes[..bytes.len() - 3], 0).unwrap_err();
        assert!(matches!(err, Error::Decode { .. }));
    }

    #[test]
    fn sender_key_is_returned_even_for_invalid_signatures() {
        let mut acc = Account::from_seed(5);
        let mut tx = build_offload_tx(&mut acc, "md-0", [0u8; 32]).unwrap();
        tx.signature = [0u8; 64];
        assert_eq!(get_sender_public_key(&tx), acc.public_key());
    }

    #[test]
    fn add_md_is_admin_only_and_idempotent() {
        let mut admin = Account::from_seed(100);
        let mut outsider = Account::from_seed(101);
        let subject = Account::from_seed(102);
        let mut table = PolicyTable::new(admin.public_key());

        contract_add_md(&mut table, &mut admin, subject.public_key(), "md-0").unwrap();
        assert!(table.contains(&subject.public_key(), "md-0"));

        // Re-adding changes nothing.
        let before = table.clone();
        contract_add_md(&mut table, &mut admin, subject.public_key(), "md-0").unwrap();
        assert_eq!(table, before);

        assert!(matches!(
            contract_add_md(&mut table, &mut outsider, subject.public_key(), "md-1"),
            Err(Error::Unauthorized(_))
        ));
        assert!(!table.contains(&subject.public_key(), "md-1"));
    }

    #[test]
    fn delete_md_revokes_the_whole_key_and_ignores_absent_entries() {
        let mut admin = Account::from_seed(100);
        let mut outsider = Account::from_seed(101);
        let mut subject = Account::from_seed(102);
        let mut table = PolicyTable::new(admin.public_key());
        contract_add_md(&mut table, &mut admin, subject.public_key(), "md-0").unwrap();
        contract_add_md(&mut table, &mut admin, subject.public_key(), "md-1").unwrap();

        contract_delete_md(&mut table, &mut admin, subject.public_key()).unwrap();
        assert!(!table.is_registered(&subject.public_key()));
        for device in ["md-0", "md-1"] {
            let tx = build_offload_tx(&mut subject, device, [0u8; 32]).unwrap();
            let res = verify_request(&tx, &table, &mut admin).unwrap();
            assert!(!res.granted);
        }

        // Deleting again, or deleting an unknown key, is a quiet no-op.
        let before = table.clone();
        contract_delete_md(&mut table, &mut admin, subject.public_key()).unwrap();
        contract_delete_md(&mut table, &mut admin, outsider.public_key()).unwrap();
        assert_eq!(table, before);

        assert!(matches!(
            contract_delete_md(&mut table, &mut outsider, subject.public_key()),
            Err(Error::Unauthorized(_))
        ));
    }

    #[test]
    fn verify_request_covers_every_branch() {
        let mut admin = Account::from_seed(100);
        let mut owner = Account::from_seed(101);
        let mut stranger = Account::from_seed(102);
        let mut table = PolicyTable::new(admin.public_key());
        contract_add_md(&mut table, &mut admin, owner.public_key(), "md-0").unwrap();

        // Registered key, registered device: granted, no penalty.
        let good = build_offload_tx(&mut owner, "md-0", [0u8; 32]).unwrap();
        let res = verify_request(&good, &table, &mut admin).unwrap();
        assert!(res.granted);
        assert_eq!(res.message, "Successful!");
        assert!(res.penalty.is_none());

        // Unregistered sender key.
        let unknown = build_offload_tx(&mut stranger, "md-0", [0u8; 32]).unwrap();
        let res = verify_request(&unknown, &table, &mut admin).unwrap();
        assert!(!res.granted);
        assert_eq!(res.message, "Failed");
        let penalty = res.penalty.expect("denial emits a penalty");
        assert_eq!(penalty.kind, TxKind::PenaltyNotice);
        assert!(penalty.signature_valid());

        // Registered key but a device it does not own.
        let wrong_device = build_offload_tx(&mut owner, "md-9", [0u8; 32]).unwrap();
        let res = verify_request(&wrong_device, &table, &mut admin).unwrap();
        assert!(!res.granted && res.penalty.is_some());

        // Valid claim, broken signature.
        let mut forged = build_offload_tx(&mut owner, "md-0", [0u8; 32]).unwrap();
        forged.signature[10] ^= 0x40;
        let res = verify_request(&forged, &table, &mut admin).unwrap();
        assert!(!res.granted && res.penalty.is_some());
    }

    #[test]
    fn mining_commits_pool_in_order_and_links_blocks() {
        let mut chain = test_chain();
        let mut admin = Account::from_seed(100);
        let mut owner = Account::from_seed(101);
        let table = {
            let mut t = PolicyTable::new(admin.public_key());
            contract_add_md(&mut t, &mut admin, owner.public_key(), "md-0").unwrap();
            t
        };
        assert!(table.contains(&owner.public_key(), "md-0"));

        let pool: Vec<Transaction> = (0..3)
            .map(|i| build_offload_tx(&mut owner, "md-0", payload_digest(&[i])).unwrap())
            .collect();
        let outcome = chain.mine_block(pool.clone());
        let block = outcome.block.expect("nonempty pool mines a block");
        assert!(outcome.rejected.is_empty());
        assert_eq!(chain.height(), 1);
        assert_eq!(block.transactions, pool);
        assert_eq!(block.prev_hash, chain.blocks()[0].hash);
        assert_eq!(block.hash, block.compute_hash());
    }

    #[test]
    fn empty_pool_mines_nothing() {
        let mut chain = test_chain();
        let outcome = chain.mine_block(Vec::new());
        assert!(outcome.block.is_none());
        assert_eq!(chain.height(), 0);
    }

    #[test]
    fn invalid_pool_transactions_are_rejected_not_mined() {
        let mut chain = test_chain();
        let mut owner = Account::from_seed(101);
        let good = build_offload_tx(&mut owner, "md-0", [0u8; 32]).unwrap();
        let mut bad = build_offload_tx(&mut owner, "md-0", [0u8; 32]).unwrap();
        bad.signature[0] ^= 1;
        let replayed = good.clone();

        let outcome = chain.mine_block(vec![good.clone(), bad.clone(), replayed.clone()]);
        let block = outcome.block.expect("one valid transaction remains");
        assert_eq!(block.transactions, vec![good]);
        assert_eq!(outcome.rejected.len(), 2);
        assert!(chain.verify());
    }

    #[test]
    fn miners_rotate_round_robin() {
        let mut chain = test_chain();
        let mut acc = Account::from_seed(1);
        for _ in 0..4 {
            let tx = build_offload_tx(&mut acc, "md-0", [0u8; 32]).unwrap();
            chain.mine_block(vec![tx]).block.expect("mined");
        }
        let miners: Vec<&str> =
            chain.blocks().iter().skip(1).map(|b| b.miner_id.as_str()).collect();
        assert_eq!(miners, vec!["m0", "m1", "m2", "m0"]);
        let mut stamps: Vec<u64> = chain.blocks().iter().map(|b| b.timestamp).collect();
        let sorted = {
            stamps.dedup();
            let mut s = stamps.clone();
            s.sort_unstable();
            s
        };
        assert_eq!(stamps, sorted, "timestamps strictly increase");
    }

    #[test]
    fn honest_chains_verify_and_genesis_only_is_valid() {
        let mut chain = test_chain();
        assert!(chain.verify());
        let mut acc = Account::from_seed(1);
        for i in 0..5 {
            let tx = build_offload_tx(&mut acc, "md-0", payload_digest(&[i])).unwrap();
            chain.mine_block(vec![tx]);
        }
        assert_eq!(chain.height(), 5);
        assert!(chain.verify());
    }

    #[test]
    fn tampering_is_detected() {
        let build = || {
            let mut chain = test_chain();
            let mut acc = Account::from_seed(1);
            for i in 0..3 {
                let tx = build_offload_tx(&mut acc, "md-0", payload_digest(&[i])).unwrap();
                chain.mine_block(vec![tx]);
            }
            chain
        };

        let mut payload_swap = build();
        payload_swap.blocks[2].transactions[0].payload[0] ^= 1;
        assert!(!payload_swap.verify());

        let mut rehashed = build();
        rehashed.blocks[2].transactions[0].payload[0] ^= 1;
        rehashed.blocks[2].tx_root = tx_root_of(&rehashed.blocks[2].transactions);
        rehashed.blocks[2].hash = rehashed.blocks[2].compute_hash();
        // Consistent re-hash still breaks the signature and the link from
        // the next block.
        assert!(!rehashed.verify());

        let mut broken_link = build();
        broken_link.blocks[1].hash[0] ^= 1;
        assert!(!broken_link.verify());

        let mut wrong_miner = build();
        wrong_miner.blocks[3].miner_id = "m0".into();
        assert!(!wrong_miner.verify());
    }

    #[test]
    fn ledger_file_round_trips_and_appends() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.bin");

        let mut chain = test_chain();
        let mut acc = Account::from_seed(1);
        let tx = build_offload_tx(&mut acc, "md-0", [0u8; 32]).unwrap();
        chain.mine_block(vec![tx]);
        chain.save(&path).unwrap();

        let mut reloaded = Chain::load(&path).unwrap();
        assert_eq!(reloaded, chain);
        assert!(reloaded.verify());

        // Append one more block through the reloaded chain.
        let tx = build_offload_tx(&mut acc, "md-0", payload_digest(b"x")).unwrap();
        let before = reloaded.height();
        reloaded.mine_block(vec![tx]);
        reloaded.append_to(&path, before).unwrap();
        let again = Chain::load(&path).unwrap();
        assert_eq!(again, reloaded);
        assert!(again.verify());

        // Corrupt one byte: load or verify must fail.
        let mut bytes = std::fs::read(&path).unwrap();
        let idx = bytes.len() / 2;
        bytes[idx] ^= 0x10;
        std::fs::write(&path, &bytes).unwrap();
        let tampered = Chain::load(&path);
        assert!(tampered.is_err() || !tampered.unwrap().verify());
    }

    #[test]
    fn identical_runs_write_identical_ledgers() {
        let run = || {
            let mut chain = test_chain();
            let mut admin = Account::from_seed(100);
            let mut table = PolicyTable::new(admin.public_key());
            let mut owner = Account::from_seed(101);
            let reg = contract_add_md(&mut table, &mut admin, owner.public_key(), "md-0").unwrap();
            chain.mine_block(vec![reg]);
            let req = build_offload_tx(&mut owner, "md-0", payload_digest(b"t")).unwrap();
            chain.mine_block(vec![req]);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("l.bin");
            chain.save(&path).unwrap();
            std::fs::read(&path).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn policy_table_serialization_round_trips() {
        let mut admin = Account::from_seed(100);
        let mut table = PolicyTable::new(admin.public_key());
        for seed in [101, 102, 103] {
            let subject = Account::from_seed(seed);
            contract_add_md(&mut table, &mut admin, subject.public_key(), &format!("md-{seed}"))
                .unwrap();
        }
        let back = PolicyTable::from_bytes(&table.to_bytes()).unwrap();
        assert_eq!(back, table);
        assert!(PolicyTable::from_bytes(&table.to_bytes()[..40]).is_err());
    }

    /// Grant decisions agree with a plain map-of-sets reference model over
    /// arbitrary interleavings of add, delete and verify.
    #[test]
    fn grants_match_reference_model_over_random_interleavings() {
        use rand::Rng;
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let mut admin = Account::from_seed(100);
        let mut table = PolicyTable::new(admin.public_key());
        let mut reference: HashMap<PublicKey, HashSet<String>> = HashMap::new();

        let mut subjects: Vec<Account> = (0..4).map(|i| Account::from_seed(200 + i)).collect();
        let devices = ["md-0", "md-1", "md-2"];

        for _ in 0..2000 {
            let s = rng.gen_range(0..subjects.len());
            let pk = subjects[s].public_key();
            let device = devices[rng.gen_range(0..devices.len())];
            match rng.gen_range(0..3) {
                0 => {
                    contract_add_md(&mut table, &mut admin, pk, device).unwrap();
                    reference.entry(pk).or_default().insert(device.to_string());
                }
                1 => {
                    contract_delete_md(&mut table, &mut admin, pk).unwrap();
                    reference.remove(&pk);
                }
                _ => {
                    let tx = build_offload_tx(&mut subjects[s], device, [0u8; 32]).unwrap();
                    let res = verify_request(&tx, &table, &mut admin).unwrap();
                    let expected = reference.get(&pk).is_some_and(|set| set.contains(device));
                    assert_eq!(res.granted, expected);
                    assert_eq!(res.granted, res.penalty.is_none());
                }
            }
        }
    }
}
