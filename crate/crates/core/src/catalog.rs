//! Descriptor catalog: VNF and NS blueprints, their validation, and an
//! append-only versioned store.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rf::Bandwidth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flavor {
    pub vcpus: u32,
    pub ram_mb: u64,
    pub disk_gb: u64,
}

impl Flavor {
    pub const fn new(vcpus: u32, ram_mb: u64, disk_gb: u64) -> Self {
        Self {
            vcpus,
            ram_mb,
            disk_gb,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadioRole {
    Enb,
    Ue,
    Channel,
}

/// Radio configuration of a VNF. The bandwidth is kept as the raw MHz
/// value so that out-of-set values surface as validation violations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioProfile {
    pub bandwidth_mhz: f64,
    pub role: RadioRole,
}

impl RadioProfile {
    pub fn bandwidth(&self) -> Option<Bandwidth> {
        Bandwidth::from_mhz(self.bandwidth_mhz).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricModel {
    pub cpu_base_pct: f64,
    pub cpu_per_rb_pct: f64,
    pub ram_fixed_mb: f64,
    pub bler_nominal: f64,
    pub snr_nominal_db: f64,
}

impl MetricModel {
    pub fn cpu_at(&self, occupied_rbs: u32) -> f64 {
        self.cpu_base_pct + self.cpu_per_rb_pct * occupied_rbs as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VnfKind {
    Radio,
    Generic,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DescriptorRef {
    pub name: String,
    pub version: String,
}

impl DescriptorRef {
    pub fn new(name: impl Into<String>, version: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            version: version.into(),
        }
    }

    /// Parses `name/version`.
    pub fn parse(s: &str) -> Option<Self> {
        let (name, version) = s.rsplit_once('/')?;
        (!name.is_empty() && !version.is_empty()).then(|| Self::new(name, version))
    }
}

impl fmt::Display for DescriptorRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.name, self.version)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VnfDescriptor {
    pub name: String,
    pub version: String,
    pub kind: VnfKind,
    pub flavor: Flavor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radio_profile: Option<RadioProfile>,
    pub metric_model: MetricModel,
    #[serde(default)]
    pub image_ref: String,
}

impl VnfDescriptor {
    pub fn reference(&self) -> DescriptorRef {
        DescriptorRef::new(&self.name, &self.version)
    }

    pub fn role(&self) -> Option<RadioRole> {
        self.radio_profile.map(|p| p.role)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NsMember {
    pub member_id: String,
    pub vnfd: DescriptorRef,
    #[serde(default = "one")]
    pub replicas: u32,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    Ip,
    Radio,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NsLink {
    pub endpoints: (String, String),
    pub link_kind: LinkKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PolicyAction {
    ReconfigureTo { target: DescriptorRef },
    NotifyOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRule {
    pub rule_id: String,
    pub alarm_rule_ref: String,
    pub action: PolicyAction,
    #[serde(default)]
    pub cooldown_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NsDescriptor {
    pub name: String,
    pub version: String,
    pub members: Vec<NsMember>,
    #[serde(default)]
    pub links: Vec<NsLink>,
    #[serde(default)]
    pub policies: Vec<PolicyRule>,
    #[serde(default)]
    pub requires_frontend: bool,
}

impl NsDescriptor {
    pub fn reference(&self) -> DescriptorRef {
        DescriptorRef::new(&self.name, &self.version)
    }

    pub fn member(&self, member_id: &str) -> Option<&NsMember> {
        self.members.iter().find(|m| m.member_id == member_id)
    }
}

/// One broken invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation(pub String);

impl Violation {
    fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

/// False for NaN as well as negatives.
fn non_negative(x: f64) -> bool {
    x >= 0.0
}

pub fn validate_vnfd(vnfd: &VnfDescriptor) -> Vec<Violation> {
    let mut v = Vec::new();
    if !is_identifier(&vnfd.name) {
        v.push(Violation::new("name is not a valid identifier"));
    }
    if !is_identifier(&vnfd.version) {
        v.push(Violation::new("version is not a valid identifier"));
    }
    let f = vnfd.flavor;
    if f.vcpus == 0 || f.ram_mb == 0 || f.disk_gb == 0 {
        v.push(Violation::new("flavor fields must be positive"));
    }
    match (vnfd.kind, &vnfd.radio_profile) {
        (VnfKind::Radio, None) => v.push(Violation::new("radio kind requires radio_profile")),
        (VnfKind::Generic, Some(_)) => v.push(Violation::new(
            "generic kind must not carry a radio_profile",
        )),
        _ => {}
    }
    if let Some(p) = &vnfd.radio_profile {
        if p.bandwidth().is_none() {
            v.push(Violation::new(format!(
                "bandwidth not in LTE set: {}",
                p.bandwidth_mhz
            )));
        }
    }
    let m = vnfd.metric_model;
    if !non_negative(m.cpu_base_pct) {
        v.push(Violation::new("cpu_base_pct must be non-negative"));
    }
    if !non_negative(m.cpu_per_rb_pct) {
        v.push(Violation::new("cpu_per_rb_pct must be non-negative"));
    }
    if !(m.ram_fixed_mb.is_finite() && m.ram_fixed_mb > 0.0) {
        v.push(Violation::new("ram_fixed_mb must be positive"));
    }
    if !(0.0..=1.0).contains(&m.bler_nominal) {
        v.push(Violation::new("bler_nominal must lie in [0, 1]"));
    }
    if !m.snr_nominal_db.is_finite() {
        v.push(Violation::new("snr_nominal_db must be finite"));
    }
    v
}

/// Read access to stored VNF descriptors, used for cross-reference checks.
pub trait VnfdLookup {
    fn vnfd(&self, r: &DescriptorRef) -> Option<VnfDescriptor>;
    fn has_nsd(&self, r: &DescriptorRef) -> bool;
}

pub fn validate_nsd(nsd: &NsDescriptor, lookup: &dyn VnfdLookup) -> Vec<Violation> {
    let mut v = Vec::new();
    if !is_identifier(&nsd.name) || !is_identifier(&nsd.version) {
        v.push(Violation::new("name and version must be valid identifiers"));
    }
    if nsd.members.is_empty() {
        v.push(Violation::new("descriptor has no members"));
    }

    let mut ids = BTreeSet::new();
    for m in &nsd.members {
        if !ids.insert(m.member_id.as_str()) {
            v.push(Violation::new(format!(
                "duplicate member_id {}",
                m.member_id
            )));
        }
        if m.replicas == 0 {
            v.push(Violation::new(format!(
                "member {} has zero replicas",
                m.member_id
            )));
        }
    }

    let mut roles: BTreeMap<&str, Option<RadioRole>> = BTreeMap::new();
    for m in &nsd.members {
        match lookup.vnfd(&m.vnfd) {
            Some(d) => {
                roles.insert(m.member_id.as_str(), d.role());
            }
            None => v.push(Violation::new(format!(
                "unresolved member {} -> {}",
                m.member_id, m.vnfd
            ))),
        }
    }

    let mut links_ok = true;
    for l in &nsd.links {
        let (a, b) = (&l.endpoints.0, &l.endpoints.1);
        for e in [a, b] {
            if !ids.contains(e.as_str()) {
                links_ok = false;
                v.push(Violation::new(format!("unresolved link endpoint {e}")));
            }
        }
        if a == b {
            v.push(Violation::new(format!("self link on {a}")));
        }
        if l.link_kind == LinkKind::Radio {
            let enbs = [a, b]
                .iter()
                .filter(|e| roles.get(e.as_str()).copied().flatten() == Some(RadioRole::Enb))
                .count();
            if enbs > 1 {
                v.push(Violation::new(format!(
                    "radio link {a}-{b} joins more than one enb"
                )));
            }
        }
    }

    if links_ok && ids.len() > 1 && !connected(&nsd.members, &nsd.links) {
        v.push(Violation::new("link graph not connected"));
    }

    for m in &nsd.members {
        if roles.get(m.member_id.as_str()).copied().flatten() != Some(RadioRole::Channel) {
            continue;
        }
        let attached = nsd.links.iter().any(|l| {
            let other = if l.endpoints.0 == m.member_id {
                &l.endpoints.1
            } else if l.endpoints.1 == m.member_id {
                &l.endpoints.0
            } else {
                return false;
            };
            matches!(
                roles.get(other.as_str()).copied().flatten(),
                Some(RadioRole::Enb | RadioRole::Ue)
            )
        });
        if !attached {
            v.push(Violation::new(format!(
                "channel member {} not attached to a radio endpoint",
                m.member_id
            )));
        }
    }

    let has_enb = roles.values().any(|r| *r == Some(RadioRole::Enb));
    if nsd.requires_frontend != has_enb {
        v.push(Violation::new(
            "requires_frontend must be set exactly when an enb member is present",
        ));
    }

    let mut rule_ids = BTreeSet::new();
    for p in &nsd.policies {
        if !rule_ids.insert(p.rule_id.as_str()) {
            v.push(Violation::new(format!(
                "duplicate policy rule_id {}",
                p.rule_id
            )));
        }
        if !non_negative(p.cooldown_s) {
            v.push(Violation::new(format!(
                "policy {} has negative cooldown",
                p.rule_id
            )));
        }
        if let PolicyAction::ReconfigureTo { target } = &p.action {
            if *target == nsd.reference() {
                v.push(Violation::new(format!(
                    "policy {} reconfigures to its own descriptor",
                    p.rule_id
                )));
            } else if !lookup.has_nsd(target) {
                v.push(Violation::new(format!(
                    "policy {} targets unknown descriptor {target}",
                    p.rule_id
                )));
            }
        }
    }
    v
}

fn connected(members: &[NsMember], links: &[NsLink]) -> bool {
    let Some(first) = members.first() else {
        return true;
    };
    let mut seen = BTreeSet::from([first.member_id.as_str()]);
    let mut queue = VecDeque::from([first.member_id.as_str()]);
    while let Some(cur) = queue.pop_front() {
        for l in links {
            let next = if l.endpoints.0 == cur {
                l.endpoints.1.as_str()
            } else if l.endpoints.1 == cur {
                l.endpoints.0.as_str()
            } else {
                continue;
            };
            if seen.insert(next) {
                queue.push_back(next);
            }
        }
    }
    members.iter().all(|m| seen.contains(m.member_id.as_str()))
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("{kind} {reference} not found")]
    NotFound {
        kind: &'static str,
        reference: DescriptorRef,
    },
    #[error("{kind} {reference} already exists")]
    Conflict {
        kind: &'static str,
        reference: DescriptorRef,
    },
    #[error("descriptor failed validation: {}", .0.iter().map(|v| v.0.as_str()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("catalog io: {0}")]
    Io(#[from] std::io::Error),
    #[error("catalog document {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CatalogContents {
    pub vnfds: Vec<VnfDescriptor>,
    pub nsds: Vec<NsDescriptor>,
}

#[derive(Default)]
struct Inner {
    vnfds: BTreeMap<DescriptorRef, VnfDescriptor>,
    nsds: BTreeMap<DescriptorRef, NsDescriptor>,
}

impl VnfdLookup for Inner {
    fn vnfd(&self, r: &DescriptorRef) -> Option<VnfDescriptor> {
        self.vnfds.get(r).cloned()
    }

    fn has_nsd(&self, r: &DescriptorRef) -> bool {
        self.nsds.contains_key(r)
    }
}

/// Versioned descriptor store. Reads share a lock; writes serialize.
/// With a data directory every stored descriptor is also written as one
/// JSON document per (name, version).
#[derive(Default)]
pub struct Catalog {
    inner: RwLock<Inner>,
    data_dir: Option<PathBuf>,
}

impl fmt::Debug for Catalog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.read();
        f.debug_struct("Catalog")
            .field("vnfds", &inner.vnfds.len())
            .field("nsds", &inner.nsds.len())
            .field("data_dir", &self.data_dir)
            .finish()
    }
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens a directory-backed catalog, loading any documents already present.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, CatalogError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(dir.join("vnfds"))?;
        fs::create_dir_all(dir.join("nsds"))?;
        let mut inner = Inner::default();
        for d in read_docs::<VnfDescriptor>(&dir.join("vnfds"))? {
            inner.vnfds.insert(d.reference(), d);
        }
        for d in read_docs::<NsDescriptor>(&dir.join("nsds"))? {
            inner.nsds.insert(d.reference(), d);
        }
        Ok(Self {
            inner: RwLock::new(inner),
            data_dir: Some(dir),
        })
    }

    pub fn from_contents(contents: CatalogContents) -> Result<Self, CatalogError> {
        let cat = Self::new();
        cat.load_contents(contents)?;
        Ok(cat)
    }

    /// Stores every VNFD, then NSDs in an order that satisfies policy
    /// targets. Entries already present with identical content are skipped.
    pub fn load_contents(&self, contents: CatalogContents) -> Result<(), CatalogError> {
        for d in contents.vnfds {
            if self.fetch_vnfd(&d.reference()).ok().as_ref() == Some(&d) {
                continue;
            }
            self.store_vnfd(d)?;
        }
        let mut pending = contents.nsds;
        while !pending.is_empty() {
            let before = pending.len();
            let mut last_err = None;
            pending.retain(|d| {
                if self.fetch_nsd(&d.reference()).ok().as_ref() == Some(d) {
                    return false;
                }
                match self.store_nsd(d.clone()) {
                    Ok(_) => false,
                    Err(e) => {
                        last_err = Some(e);
                        true
                    }
                }
            });
            if pending.len() == before {
                return Err(last_err.expect("no progress implies an error"));
            }
        }
        Ok(())
    }

    pub fn contents(&self) -> CatalogContents {
        let inner = self.inner.read();
        CatalogContents {
            vnfds: inner.vnfds.values().cloned().collect(),
            nsds: inner.nsds.values().cloned().collect(),
        }
    }

    pub fn validate_nsd(&self, nsd: &NsDescriptor) -> Vec<Violation> {
        validate_nsd(nsd, &*self.inner.read())
    }

    pub fn store_vnfd(&self, vnfd: VnfDescriptor) -> Result<DescriptorRef, CatalogError> {
        let violations = validate_vnfd(&vnfd);
        if !violations.is_empty() {
            return Err(CatalogError::Invalid(violations));
        }
        let mut inner = self.inner.write();
        let r = vnfd.reference();
        if inner.vnfds.contains_key(&r) {
            return Err(CatalogError::Conflict {
                kind: "vnfd",
                reference: r,
            });
        }
        self.persist("vnfds", &r, &vnfd)?;
        inner.vnfds.insert(r.clone(), vnfd);
        Ok(r)
    }

    pub fn store_nsd(&self, nsd: NsDescriptor) -> Result<DescriptorRef, CatalogError> {
        let mut inner = self.inner.write();
        let violations = validate_nsd(&nsd, &*inner);
        if !violations.is_empty() {
            return Err(CatalogError::Invalid(violations));
        }
        let r = nsd.reference();
        if inner.nsds.contains_key(&r) {
            return Err(CatalogError::Conflict {
                kind: "nsd",
                reference: r,
            });
        }
        self.persist("nsds", &r, &nsd)?;
        inner.nsds.insert(r.clone(), nsd);
        Ok(r)
    }

    pub fn fetch_vnfd(&self, r: &DescriptorRef) -> Result<VnfDescriptor, CatalogError> {
        self.inner
            .read()
            .vnfds
            .get(r)
            .cloned()
            .ok_or_else(|| CatalogError::NotFound {
                kind: "vnfd",
                reference: r.clone(),
            })
    }

    pub fn fetch_nsd(&self, r: &DescriptorRef) -> Result<NsDescriptor, CatalogError> {
        self.inner
            .read()
            .nsds
            .get(r)
            .cloned()
            .ok_or_else(|| CatalogError::NotFound {
                kind: "nsd",
                reference: r.clone(),
            })
    }

    pub fn list_vnfds(&self) -> Vec<VnfDescriptor> {
        self.inner.read().vnfds.values().cloned().collect()
    }

    pub fn list_nsds(&self) -> Vec<NsDescriptor> {
        self.inner.read().nsds.values().cloned().collect()
    }

    fn persist<T: Serialize>(
        &self,
        sub: &str,
        r: &DescriptorRef,
        doc: &T,
    ) -> Result<(), CatalogError> {
        let Some(dir) = &self.data_dir else {
            return Ok(());
        };
        let path = dir.join(sub).join(format!("{}@{}.json", r.name, r.version));
        let tmp = path.with_extension("json.tmp");
        let bytes = serde_json::to_vec_pretty(doc).expect("descriptors always serialize");
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }
}

impl VnfdLookup for Catalog {
    fn vnfd(&self, r: &DescriptorRef) -> Option<VnfDescriptor> {
        self.inner.read().vnfds.get(r).cloned()
    }

    fn has_nsd(&self, r: &DescriptorRef) -> bool {
        self.inner.read().nsds.contains_key(r)
    }
}

fn read_docs<T: for<'de> Deserialize<'de>>(dir: &Path) -> Result<Vec<T>, CatalogError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let bytes = fs::read(&path)?;
            serde_json::from_slice(&bytes).map_err(|source| CatalogError::Parse { path, source })
        })
        .collect()
}
