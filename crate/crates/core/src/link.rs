//! Pairing, authenticated wake pings, and the simulated phone→watch radio.
//!
//! A ping carries no payload beyond its own existence: the watch decides what
//! to play. Its tag is HMAC-SHA256 under the pairing key over the canonical
//! encoding produced by [`AuthPing::canonical_bytes`]:
//!
//! ```text
//! field(b) = u32_be(len(b)) || b
//! bytes    = field("hapticauth/ping/v1")
//!         || field(sender_id)        8 bytes
//!         || field(u64_be(counter))  8 bytes
//!         || field(nonce)            16 bytes
//!         || field(u64_be(sent_at))  8 bytes
//! ```

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt;

use hmac::{Hmac, Mac};
use rand::{Rng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::Sha256;
use thiserror::Error;

type HmacSha256 = Hmac<Sha256>;

pub const DEVICE_ID_LEN: usize = 8;
pub const KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 16;
pub const TAG_LEN: usize = 32;
pub const PING_DOMAIN: &[u8] = b"hapticauth/ping/v1";

/// Nonces remembered per replay window.
pub const NONCE_WINDOW: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinkError {
    #[error("devices {phone} and {watch} are already paired")]
    AlreadyPaired { phone: DeviceId, watch: DeviceId },
    #[error("expected a {expected:?}, got device {id} of kind {actual:?}")]
    KindMismatch {
        id: DeviceId,
        expected: DeviceKind,
        actual: DeviceKind,
    },
    #[error("a device cannot be paired with itself ({0})")]
    SameDevice(DeviceId),
    #[error("counter {counter} is not above the last used counter {last}")]
    CounterReused { counter: u64, last: u64 },
    #[error("invalid link model: {0}")]
    InvalidLinkModel(String),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DeviceId(pub [u8; DEVICE_ID_LEN]);

impl DeviceId {
    pub fn random(rng: &mut impl RngCore) -> Self {
        let mut id = [0u8; DEVICE_ID_LEN];
        rng.fill_bytes(&mut id);
        DeviceId(id)
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DeviceId({self})")
    }
}

impl Serialize for DeviceId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DeviceId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        let mut id = [0u8; DEVICE_ID_LEN];
        hex::decode_to_slice(&text, &mut id).map_err(serde::de::Error::custom)?;
        Ok(DeviceId(id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Phone,
    Watch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeviceIdentity {
    pub id: DeviceId,
    pub kind: DeviceKind,
}

impl DeviceIdentity {
    pub fn new(id: DeviceId, kind: DeviceKind) -> Self {
        Self { id, kind }
    }

    pub fn random(kind: DeviceKind, rng: &mut impl RngCore) -> Self {
        Self {
            id: DeviceId::random(rng),
            kind,
        }
    }
}

/// Pairing secret. Never printed.
#[derive(Clone, PartialEq, Eq)]
pub struct SharedKey([u8; KEY_LEN]);

impl SharedKey {
    pub fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        SharedKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

impl fmt::Debug for SharedKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SharedKey(..)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairingRecord {
    pub phone_id: DeviceId,
    pub watch_id: DeviceId,
    pub shared_key: SharedKey,
    pub created_at: u64,
}

/// Active pairings, at most one per (phone, watch).
#[derive(Debug, Default)]
pub struct PairingRegistry {
    pairs: BTreeMap<(DeviceId, DeviceId), PairingRecord>,
}

impl PairingRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Draws a fresh key from `rng` and records the pairing.
    pub fn pair_devices(
        &mut self,
        phone: &DeviceIdentity,
        watch: &DeviceIdentity,
        now: u64,
        rng: &mut impl RngCore,
    ) -> Result<PairingRecord, LinkError> {
        check_kind(phone, DeviceKind::Phone)?;
        check_kind(watch, DeviceKind::Watch)?;
        if phone.id == watch.id {
            return Err(LinkError::SameDevice(phone.id));
        }
        if self.pairs.contains_key(&(phone.id, watch.id)) {
            return Err(LinkError::AlreadyPaired {
                phone: phone.id,
                watch: watch.id,
            });
        }
        let mut key = [0u8; KEY_LEN];
        rng.fill_bytes(&mut key);
        let record = PairingRecord {
            phone_id: phone.id,
            watch_id: watch.id,
            shared_key: SharedKey(key),
            created_at: now,
        };
        self.pairs.insert((phone.id, watch.id), record.clone());
        Ok(record)
    }

    pub fn get(&self, phone: DeviceId, watch: DeviceId) -> Option<&PairingRecord> {
        self.pairs.get(&(phone, watch))
    }

    pub fn unpair(&mut self, phone: DeviceId, watch: DeviceId) -> Option<PairingRecord> {
        self.pairs.remove(&(phone, watch))
    }
}

fn check_kind(device: &DeviceIdentity, expected: DeviceKind) -> Result<(), LinkError> {
    if device.kind == expected {
        Ok(())
    } else {
        Err(LinkError::KindMismatch {
            id: device.id,
            expected,
            actual: device.kind,
        })
    }
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthPing {
    pub sender_id: DeviceId,
    pub counter: u64,
    #[serde(with = "hex_array")]
    pub nonce: [u8; NONCE_LEN],
    pub sent_at: u64,
    #[serde(with = "hex_array")]
    pub tag: [u8; TAG_LEN],
}

impl fmt::Debug for AuthPing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AuthPing")
            .field("sender_id", &self.sender_id)
            .field("counter", &self.counter)
            .field("nonce", &hex::encode(self.nonce))
            .field("sent_at", &self.sent_at)
            .field("tag", &hex::encode(self.tag))
            .finish()
    }
}

impl AuthPing {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical_ping_bytes(self.sender_id, self.counter, &self.nonce, self.sent_at)
    }
}

pub fn canonical_ping_bytes(
    sender_id: DeviceId,
    counter: u64,
    nonce: &[u8; NONCE_LEN],
    sent_at: u64,
) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 * 4 + PING_DOMAIN.len() + DEVICE_ID_LEN + 8 + NONCE_LEN + 8);
    for field in [
        PING_DOMAIN,
        &sender_id.0[..],
        &counter.to_be_bytes()[..],
        &nonce[..],
        &sent_at.to_be_bytes()[..],
    ] {
        out.extend_from_slice(&(field.len() as u32).to_be_bytes());
        out.extend_from_slice(field);
    }
    out
}

pub fn ping_tag(key: &SharedKey, canonical: &[u8]) -> [u8; TAG_LEN] {
    let mut mac = HmacSha256::new_from_slice(&key.0).expect("HMAC accepts any key length");
    mac.update(canonical);
    mac.finalize().into_bytes().into()
}

/// Sender-side counter bookkeeping for one pairing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SendState {
    pub last_counter: u64,
}

pub fn create_ping(
    pairing: &PairingRecord,
    send: &mut SendState,
    counter: u64,
    now: u64,
    rng: &mut impl RngCore,
) -> Result<AuthPing, LinkError> {
    if counter <= send.last_counter {
        return Err(LinkError::CounterReused {
            counter,
            last: send.last_counter,
        });
    }
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let ping = sign_ping(pairing.phone_id, counter, nonce, now, &pairing.shared_key);
    send.last_counter = counter;
    Ok(ping)
}

/// Builds a ping from explicit parts. Used for test vectors and by
/// [`create_ping`].
pub fn sign_ping(
    sender_id: DeviceId,
    counter: u64,
    nonce: [u8; NONCE_LEN],
    sent_at: u64,
    key: &SharedKey,
) -> AuthPing {
    let tag = ping_tag(key, &canonical_ping_bytes(sender_id, counter, &nonce, sent_at));
    AuthPing {
        sender_id,
        counter,
        nonce,
        sent_at,
        tag,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    BadTag,
    StaleCounter,
    ReplayedNonce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

/// Receiver-side replay window for one pairing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayState {
    highest_accepted_counter: u64,
    order: VecDeque<[u8; NONCE_LEN]>,
    seen: HashSet<[u8; NONCE_LEN]>,
}

impl ReplayState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn highest_accepted_counter(&self) -> u64 {
        self.highest_accepted_counter
    }

    pub fn has_seen(&self, nonce: &[u8; NONCE_LEN]) -> bool {
        self.seen.contains(nonce)
    }

    fn remember(&mut self, counter: u64, nonce: [u8; NONCE_LEN]) {
        self.highest_accepted_counter = counter;
        if self.order.len() == NONCE_WINDOW {
            if let Some(old) = self.order.pop_front() {
                self.seen.remove(&old);
            }
        }
        self.order.push_back(nonce);
        self.seen.insert(nonce);
    }
}

impl Serialize for ReplayState {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = serializer.serialize_struct("ReplayState", 2)?;
        st.serialize_field("highest_accepted_counter", &self.highest_accepted_counter)?;
        st.serialize_field("remembered_nonces", &self.order.len())?;
        st.end()
    }
}

/// Checks tag, then counter freshness, then nonce novelty. Only an
/// accepted ping mutates `state`.
pub fn verify_ping(pairing: &PairingRecord, ping: &AuthPing, state: &mut ReplayState) -> Verdict {
    if ping.sender_id != pairing.phone_id {
        return Verdict::Reject(RejectReason::BadTag);
    }
    let mut mac =
        HmacSha256::new_from_slice(pairing.shared_key.as_bytes()).expect("HMAC accepts any key length");
    mac.update(&ping.canonical_bytes());
    if mac.verify_slice(&ping.tag).is_err() {
        return Verdict::Reject(RejectReason::BadTag);
    }
    if ping.counter <= state.highest_accepted_counter {
        return Verdict::Reject(RejectReason::StaleCounter);
    }
    if state.has_seen(&ping.nonce) {
        return Verdict::Reject(RejectReason::ReplayedNonce);
    }
    state.remember(ping.counter, ping.nonce);
    Verdict::Accept
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLinkModel", into = "RawLinkModel")]
pub struct LinkModel {
    latency_ms_min: u64,
    latency_ms_max: u64,
    loss_probability: f64,
    duplicate_probability: f64,
}

#[derive(Serialize, Deserialize)]
struct RawLinkModel {
    latency_ms_min: u64,
    latency_ms_max: u64,
    loss_probability: f64,
    duplicate_probability: f64,
}

impl TryFrom<RawLinkModel> for LinkModel {
    type Error = LinkError;

    fn try_from(r: RawLinkModel) -> Result<Self, Self::Error> {
        LinkModel::new(
            r.latency_ms_min,
            r.latency_ms_max,
            r.loss_probability,
            r.duplicate_probability,
        )
    }
}

impl From<LinkModel> for RawLinkModel {
    fn from(l: LinkModel) -> Self {
        RawLinkModel {
            latency_ms_min: l.latency_ms_min,
            latency_ms_max: l.latency_ms_max,
            loss_probability: l.loss_probability,
            duplicate_probability: l.duplicate_probability,
        }
    }
}

impl LinkModel {
    pub fn new(
        latency_ms_min: u64,
        latency_ms_max: u64,
        loss_probability: f64,
        duplicate_probability: f64,
    ) -> Result<Self, LinkError> {
        if latency_ms_min > latency_ms_max {
            return Err(LinkError::InvalidLinkModel(format!(
                "latency range {latency_ms_min}..={latency_ms_max} is empty"
            )));
        }
        for (name, p) in [
            ("loss_probability", loss_probability),
            ("duplicate_probability", duplicate_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(LinkError::InvalidLinkModel(format!(
                    "{name} {p} outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            latency_ms_min,
            latency_ms_max,
            loss_probability,
            duplicate_probability,
        })
    }

    /// Lossless, duplicate-free link with a fixed latency.
    pub fn ideal(latency_ms: u64) -> Self {
        Self {
            latency_ms_min: latency_ms,
            latency_ms_max: latency_ms,
            loss_probability: 0.0,
            duplicate_probability: 0.0,
        }
    }

    pub fn latency_range(&self) -> (u64, u64) {
        (self.latency_ms_min, self.latency_ms_max)
    }

    pub fn loss_probability(&self) -> f64 {
        self.loss_probability
    }

    pub fn duplicate_probability(&self) -> f64 {
        self.duplicate_probability
    }
}

impl Default for LinkModel {
    fn default() -> Self {
        Self {
            latency_ms_min: 20,
            latency_ms_max: 80,
            loss_probability: 0.0,
            duplicate_probability: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome")]
pub enum TransmitOutcome {
    Dropped,
    Delivered {
        arrival_ms: u64,
        duplicate_arrival_ms: Option<u64>,
    },
}

impl TransmitOutcome {
    /// Arrival times in delivery order.
    pub fn arrivals(&self) -> Vec<u64> {
        match *self {
            TransmitOutcome::Dropped => Vec::new(),
            TransmitOutcome::Delivered {
                arrival_ms,
                duplicate_arrival_ms,
            } => {
                let mut v = vec![arrival_ms];
                v.extend(duplicate_arrival_ms);
                v.sort_unstable();
                v
            }
        }
    }
}

/// Sends one ping across the simulated radio. Always consumes the same
/// number of draws from `rng`, so outcomes for later pings do not depend on
/// whether earlier ones were dropped.
pub fn transmit(_ping: &AuthPing, link: &LinkModel, rng: &mut impl Rng, now: u64) -> TransmitOutcome {
    let loss_draw: f64 = rng.gen_range(0.0..1.0);
    let latency = rng.gen_range(link.latency_ms_min..=link.latency_ms_max);
    let dup_draw: f64 = rng.gen_range(0.0..1.0);
    let dup_latency = rng.gen_range(link.latency_ms_min..=link.latency_ms_max);
    if loss_draw < link.loss_probability {
        return TransmitOutcome::Dropped;
    }
    TransmitOutcome::Delivered {
        arrival_ms: now + latency,
        duplicate_arrival_ms: (dup_draw < link.duplicate_probability).then_some(now + dup_latency),
    }
}

mod hex_array {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer, const N: usize>(bytes: &[u8; N], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(d: D) -> Result<[u8; N], D::Error> {
        let text = String::deserialize(d)?;
        let mut out = [0u8; N];
        hex::decode_to_slice(&text, &mut out).map_err(serde::de::Error::custom)?;
        Ok(out)
    }
}
