//! Append-only, hash-chained evidence ledger with integrity verification and
//! deterministic replay.
//!
//! Wire format (bit-exact normative): a JSONL file whose first line is the
//! header `{"format":"sal-evidence","genesis":"SAL-GENESIS-V1","policy_hash":...,"version":1}`
//! followed by one canonical-JSON record per line. Hashes are lowercase hex
//! SHA-256.
//!
//! `record_hash` covers the record minus `record_hash`, `stage_latencies_ns`,
//! and `trailer_hash`; the first record's `prev_hash` is the SHA-256 of the
//! genesis string. Stage latencies are wall-clock telemetry and would destroy
//! replay determinism if chained, so they live in a trailer covered by their
//! own `trailer_hash` (bound to `record_hash`), keeping every byte of a
//! persisted record tamper-evident.

use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

use crate::canonical;
use crate::evaluator::{
    evaluate_from_snapshot_with, Decision, PolicyEngine, PolicySet, Verdict,
};
use crate::executor::ExecutedAction;
use crate::intent::parse_intent;
use crate::state::ContextSnapshot;

/// Genesis constant; the chain anchor is its SHA-256.
pub const GENESIS: &str = "SAL-GENESIS-V1";
pub const LEDGER_FORMAT: &str = "sal-evidence";
pub const LEDGER_VERSION: u64 = 1;

pub fn genesis_hash() -> String {
    canonical::sha256_hex(GENESIS.as_bytes())
}

/// Executed action or the explicit withheld marker (the denied branch is
/// recorded identically to executions for complete attribution).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecutedField {
    Executed(ExecutedAction),
    Withheld,
}

impl ExecutedField {
    pub fn executed(&self) -> Option<&ExecutedAction> {
        match self {
            ExecutedField::Executed(a) => Some(a),
            ExecutedField::Withheld => None,
        }
    }
}

const WITHHELD_MARKER: &str = "WITHHELD";

impl Serialize for ExecutedField {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            ExecutedField::Executed(a) => a.serialize(serializer),
            ExecutedField::Withheld => serializer.serialize_str(WITHHELD_MARKER),
        }
    }
}

impl<'de> Deserialize<'de> for ExecutedField {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        match value {
            Value::String(s) if s == WITHHELD_MARKER => Ok(ExecutedField::Withheld),
            Value::Object(_) => serde_json::from_value::<ExecutedAction>(value)
                .map(ExecutedField::Executed)
                .map_err(D::Error::custom),
            _ => Err(D::Error::custom("executed_action must be an action object or \"WITHHELD\"")),
        }
    }
}

/// One sealed ledger entry. Field declaration order is lexicographic so the
/// struct serializes canonically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainRecord {
    pub context_hash: String,
    pub context_snapshot: ContextSnapshot,
    pub executed_action: ExecutedField,
    pub intent_canonical: String,
    pub policy_hash: String,
    pub prev_hash: String,
    pub record_hash: String,
    pub stage_latencies_ns: [u64; 4],
    pub step_index: u64,
    pub trailer_hash: String,
    pub verdict: Verdict,
}

impl ChainRecord {
    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        canonical::to_canonical_bytes_unchecked(self)
    }

    /// Replace the latency trailer and recompute its hash. Latencies are
    /// outside `record_hash`, so this never invalidates the chain.
    pub fn set_stage_latencies(&mut self, stage_latencies_ns: [u64; 4]) {
        self.stage_latencies_ns = stage_latencies_ns;
        self.trailer_hash = compute_trailer_hash(&self.record_hash, &self.stage_latencies_ns);
    }
}

/// The bytes covered by `record_hash`: the record minus itself and the
/// latency trailer. The snapshot is embedded as pre-serialized canonical
/// bytes so sealing serializes it exactly once.
#[derive(Serialize)]
struct HashView<'a> {
    context_hash: &'a str,
    context_snapshot: &'a serde_json::value::RawValue,
    executed_action: &'a ExecutedField,
    intent_canonical: &'a str,
    policy_hash: &'a str,
    prev_hash: &'a str,
    step_index: u64,
    verdict: &'a Verdict,
}

#[derive(Serialize)]
struct TrailerView<'a> {
    record_hash: &'a str,
    stage_latencies_ns: &'a [u64; 4],
}

fn raw_snapshot(snapshot: &ContextSnapshot) -> Box<serde_json::value::RawValue> {
    serde_json::value::to_raw_value(snapshot).expect("snapshot serializes")
}

fn record_hash_with_raw(record: &ChainRecord, raw: &serde_json::value::RawValue) -> String {
    canonical::sha256_hex(&canonical::to_canonical_bytes_unchecked(&HashView {
        context_hash: &record.context_hash,
        context_snapshot: raw,
        executed_action: &record.executed_action,
        intent_canonical: &record.intent_canonical,
        policy_hash: &record.policy_hash,
        prev_hash: &record.prev_hash,
        step_index: record.step_index,
        verdict: &record.verdict,
    }))
}

fn compute_record_hash(record: &ChainRecord) -> String {
    record_hash_with_raw(record, &raw_snapshot(&record.context_snapshot))
}

fn compute_trailer_hash(record_hash: &str, stage_latencies_ns: &[u64; 4]) -> String {
    canonical::sha256_hex(&canonical::to_canonical_bytes_unchecked(&TrailerView {
        record_hash,
        stage_latencies_ns,
    }))
}

/// Unsealed record fields supplied to [`Ledger::append`].
#[derive(Debug, Clone)]
pub struct RecordDraft {
    /// Optional caller-computed hash of the snapshot. Sealing always derives
    /// the hash from the snapshot itself and refuses a mismatching value.
    pub context_hash: Option<String>,
    pub context_snapshot: ContextSnapshot,
    pub executed_action: ExecutedField,
    pub intent_canonical: String,
    pub stage_latencies_ns: [u64; 4],
    pub verdict: Verdict,
}

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("append refused: context hash does not match the provided snapshot")]
    ContextHashMismatch,
    #[error("append refused: verdict policy hash does not match the ledger's")]
    PolicyHashMismatch,
    #[error("ledger integrity violation at record {0}")]
    Integrity(u64),
    #[error("ledger file tip changed under us (truncation or external edit)")]
    TipMismatch,
    #[error("ledger decode failed: {0}")]
    Decode(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerHeader {
    pub format: String,
    pub genesis: String,
    pub policy_hash: String,
    pub version: u64,
}

impl LedgerHeader {
    fn new(policy_hash: &str) -> Self {
        LedgerHeader {
            format: LEDGER_FORMAT.to_string(),
            genesis: GENESIS.to_string(),
            policy_hash: policy_hash.to_string(),
            version: LEDGER_VERSION,
        }
    }

    fn is_valid(&self) -> bool {
        self.format == LEDGER_FORMAT
            && self.genesis == GENESIS
            && self.version == LEDGER_VERSION
            && is_hex_hash(&self.policy_hash)
    }
}

fn is_hex_hash(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
}

/// In-memory ledger with a sealed append operation.
#[derive(Debug, Clone)]
pub struct Ledger {
    policy_hash: String,
    records: Vec<ChainRecord>,
}

impl Ledger {
    pub fn new(policy_hash: String) -> Self {
        Ledger {
            policy_hash,
            records: Vec::new(),
        }
    }

    pub fn policy_hash(&self) -> &str {
        &self.policy_hash
    }

    pub fn records(&self) -> &[ChainRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn tip_hash(&self) -> String {
        self.records
            .last()
            .map(|r| r.record_hash.clone())
            .unwrap_or_else(genesis_hash)
    }

    /// Seal a draft into the record that would sit at the current tip:
    /// recompute and check the context hash, chain the previous hash, and
    /// compute `record_hash` and `trailer_hash`. Does not mutate the ledger.
    pub fn seal(&self, draft: RecordDraft) -> Result<ChainRecord, ChainError> {
        let raw = raw_snapshot(&draft.context_snapshot);
        let computed = canonical::sha256_hex(raw.get().as_bytes());
        if let Some(provided) = &draft.context_hash {
            if *provided != computed {
                return Err(ChainError::ContextHashMismatch);
            }
        }
        if draft.verdict.policy_hash != self.policy_hash {
            return Err(ChainError::PolicyHashMismatch);
        }
        let mut record = ChainRecord {
            context_hash: computed,
            context_snapshot: draft.context_snapshot,
            executed_action: draft.executed_action,
            intent_canonical: draft.intent_canonical,
            policy_hash: self.policy_hash.clone(),
            prev_hash: self.tip_hash(),
            record_hash: String::new(),
            stage_latencies_ns: draft.stage_latencies_ns,
            step_index: self.records.len() as u64,
            trailer_hash: String::new(),
            verdict: draft.verdict,
        };
        record.record_hash = record_hash_with_raw(&record, &raw);
        record.trailer_hash =
            compute_trailer_hash(&record.record_hash, &record.stage_latencies_ns);
        Ok(record)
    }

    /// Push a record produced by [`Ledger::seal`] against the current tip.
    /// Checks linkage, position, and the trailer hash; callers must not alter
    /// hashed fields between seal and push.
    pub fn push_sealed(&mut self, record: ChainRecord) -> Result<&ChainRecord, ChainError> {
        let index = self.records.len() as u64;
        if record.step_index != index
            || record.prev_hash != self.tip_hash()
            || record.trailer_hash
                != compute_trailer_hash(&record.record_hash, &record.stage_latencies_ns)
        {
            return Err(ChainError::Integrity(index));
        }
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }

    /// Seal and append one record. Atomic at the value level: on error the
    /// ledger is unchanged.
    pub fn append(&mut self, draft: RecordDraft) -> Result<&ChainRecord, ChainError> {
        let record = self.seal(draft)?;
        self.push_sealed(record)
    }

    pub fn header_line(&self) -> Vec<u8> {
        canonical::to_canonical_bytes_unchecked(&LedgerHeader::new(&self.policy_hash))
    }

    /// Full JSONL encoding: header line then one canonical record per line.
    pub fn to_jsonl_bytes(&self) -> Vec<u8> {
        let mut out = self.header_line();
        out.push(b'\n');
        for record in &self.records {
            out.extend_from_slice(&record.to_canonical_bytes());
            out.push(b'\n');
        }
        out
    }

    /// Whole-file write via temp file and rename, so a crash leaves either
    /// the old file or the complete new one.
    pub fn write_to_path(&self, path: &Path) -> Result<(), ChainError> {
        write_atomic(path, &self.to_jsonl_bytes())
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ChainError> {
    let tmp = path.with_extension("tmp-write");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Incremental file-backed appender. Each append re-checks that the file
/// still ends with the line we last wrote; truncation or external edits
/// refuse the append.
pub struct LedgerFile {
    path: std::path::PathBuf,
    tip_line: Vec<u8>,
}

impl LedgerFile {
    pub fn create(path: &Path, policy_hash: &str) -> Result<Self, ChainError> {
        let header = canonical::to_canonical_bytes_unchecked(&LedgerHeader::new(policy_hash));
        let mut f = std::fs::File::create(path)?;
        f.write_all(&header)?;
        f.write_all(b"\n")?;
        f.sync_all()?;
        Ok(LedgerFile {
            path: path.to_path_buf(),
            tip_line: header,
        })
    }

    fn read_last_line(&self) -> Result<Vec<u8>, ChainError> {
        let mut f = std::fs::File::open(&self.path)?;
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes)?;
        if !bytes.ends_with(b"\n") {
            return Err(ChainError::TipMismatch);
        }
        bytes.pop();
        let start = bytes
            .iter()
            .rposition(|b| *b == b'\n')
            .map(|p| p + 1)
            .unwrap_or(0);
        Ok(bytes[start..].to_vec())
    }

    /// Append one sealed record line. A single buffered write of the full
    /// line keeps a crash from leaving a partial record before the final
    /// flush.
    pub fn append(&mut self, record: &ChainRecord) -> Result<(), ChainError> {
        if self.read_last_line()? != self.tip_line {
            return Err(ChainError::TipMismatch);
        }
        let line = record.to_canonical_bytes();
        let mut f = std::fs::OpenOptions::new().append(true).open(&self.path)?;
        f.seek(SeekFrom::End(0))?;
        let mut buf = Vec::with_capacity(line.len() + 1);
        buf.extend_from_slice(&line);
        buf.push(b'\n');
        f.write_all(&buf)?;
        f.sync_all()?;
        self.tip_line = line;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationReport {
    pub first_bad_index: Option<u64>,
    pub ok: bool,
}

impl VerificationReport {
    fn good() -> Self {
        VerificationReport {
            first_bad_index: None,
            ok: true,
        }
    }

    fn bad(index: u64) -> Self {
        VerificationReport {
            first_bad_index: Some(index),
            ok: false,
        }
    }
}

fn split_lines(bytes: &[u8]) -> Result<Vec<&[u8]>, u64> {
    if bytes.is_empty() {
        return Err(0);
    }
    let mut lines: Vec<&[u8]> = bytes.split(|b| *b == b'\n').collect();
    match lines.pop() {
        // Newline-terminated file leaves one empty trailing segment.
        Some([]) => Ok(lines),
        // Unterminated tail: the damage sits on the last line.
        Some(_) => Err(lines.len().saturating_sub(1) as u64),
        None => Err(0),
    }
}

fn parse_header(line: &[u8]) -> Option<LedgerHeader> {
    if !canonical::is_canonical_json(line) {
        return None;
    }
    let header: LedgerHeader = serde_json::from_slice(line).ok()?;
    header.is_valid().then_some(header)
}

fn check_record(
    line: &[u8],
    index: u64,
    prev_hash: &str,
    header_policy_hash: &str,
) -> Option<ChainRecord> {
    if !canonical::is_canonical_json(line) {
        return None;
    }
    let record: ChainRecord = serde_json::from_slice(line).ok()?;
    let valid = record.step_index == index
        && record.policy_hash == header_policy_hash
        && record.verdict.policy_hash == header_policy_hash
        && record.prev_hash == prev_hash
        && record.context_hash
            == canonical::sha256_hex(&record.context_snapshot.to_canonical_bytes())
        && record.record_hash == compute_record_hash(&record)
        && record.trailer_hash
            == compute_trailer_hash(&record.record_hash, &record.stage_latencies_ns);
    valid.then_some(record)
}

/// Verify a persisted ledger byte-for-byte: canonical line encoding, strict
/// schema, recomputed record and trailer hashes, link chaining, and position
/// consistency. `first_bad_index` reports the earliest violating record (an
/// unreadable header reports index 0).
pub fn verify_ledger_bytes(bytes: &[u8]) -> VerificationReport {
    let lines = match split_lines(bytes) {
        Ok(lines) => lines,
        Err(bad_line) => return VerificationReport::bad(bad_line.saturating_sub(1)),
    };
    if lines.is_empty() {
        return VerificationReport::bad(0);
    }
    let header = match parse_header(lines[0]) {
        Some(h) => h,
        None => return VerificationReport::bad(0),
    };
    let mut prev_hash = genesis_hash();
    for (i, line) in lines[1..].iter().enumerate() {
        match check_record(line, i as u64, &prev_hash, &header.policy_hash) {
            Some(record) => prev_hash = record.record_hash,
            None => return VerificationReport::bad(i as u64),
        }
    }
    VerificationReport::good()
}

/// Strictly decode a ledger that already verified.
pub fn parse_ledger_bytes(bytes: &[u8]) -> Result<(LedgerHeader, Vec<ChainRecord>), ChainError> {
    let report = verify_ledger_bytes(bytes);
    if !report.ok {
        return Err(ChainError::Integrity(report.first_bad_index.unwrap_or(0)));
    }
    let lines = split_lines(bytes).map_err(ChainError::Integrity)?;
    let header: LedgerHeader = serde_json::from_slice(lines[0])
        .map_err(|e| ChainError::Decode(e.to_string()))?;
    let records = lines[1..]
        .iter()
        .map(|line| serde_json::from_slice(line).map_err(|e| ChainError::Decode(e.to_string())))
        .collect::<Result<Vec<ChainRecord>, ChainError>>()?;
    Ok((header, records))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayReport {
    /// Records skipped because their policy hash differs from the supplied
    /// policy set.
    pub flagged: Vec<u64>,
    pub matched: u64,
    pub mismatched: Vec<u64>,
}

impl ReplayReport {
    pub fn is_clean(&self) -> bool {
        self.mismatched.is_empty() && self.flagged.is_empty()
    }
}

fn replay_record(record: &ChainRecord, engine: &PolicyEngine) -> bool {
    match parse_intent(record.intent_canonical.as_bytes()) {
        Ok(intent) => {
            let expected =
                evaluate_from_snapshot_with(&intent, &record.context_snapshot, engine);
            if expected != record.verdict {
                return false;
            }
            match &record.executed_action {
                ExecutedField::Executed(action) => {
                    record.verdict.decision == Decision::Approved
                        && action.action_type() == intent.action_type
                        && action.source_intent_hash() == record.verdict.intent_hash
                }
                // A withheld outcome is consistent with any verdict: denials
                // always withhold, and an approved intent may still have been
                // withheld by an execution-time fault.
                ExecutedField::Withheld => true,
            }
        }
        Err(_) => {
            // Unparseable submissions must have been default-denied.
            let expected = Verdict::denied_error(
                canonical::sha256_hex(record.intent_canonical.as_bytes()),
                engine.policy_hash().to_string(),
            );
            record.verdict == expected && record.executed_action == ExecutedField::Withheld
        }
    }
}

/// Re-derive every recorded decision from its stored intent and context
/// snapshot under `policies` and compare against what the ledger claims.
///
/// Precondition: the ledger verifies. Records sealed under a different policy
/// hash are flagged and skipped, not counted as mismatches.
pub fn replay_ledger_bytes(
    bytes: &[u8],
    policies: &PolicySet,
) -> Result<ReplayReport, ChainError> {
    let (_, records) = parse_ledger_bytes(bytes)?;
    let engine = PolicyEngine::compile(policies);
    let mut report = ReplayReport::default();
    for record in &records {
        if record.policy_hash != policies.policy_hash {
            report.flagged.push(record.step_index);
            continue;
        }
        if replay_record(record, &engine) {
            report.matched += 1;
        } else {
            report.mismatched.push(record.step_index);
        }
    }
    Ok(report)
}

/// Replay-normalization view: the same ledger with every latency trailer
/// zeroed (and its trailer hash recomputed accordingly). Two honest runs of
/// the same seeded scenario are byte-identical under this view.
pub fn normalize_ledger_bytes(bytes: &[u8]) -> Result<Vec<u8>, ChainError> {
    let (header, records) = parse_ledger_bytes(bytes)?;
    let mut out = canonical::to_canonical_bytes_unchecked(&header);
    out.push(b'\n');
    for mut record in records {
        record.stage_latencies_ns = [0, 0, 0, 0];
        record.trailer_hash =
            compute_trailer_hash(&record.record_hash, &record.stage_latencies_ns);
        out.extend_from_slice(&record.to_canonical_bytes());
        out.push(b'\n');
    }
    Ok(out)
}
