//! Simulated NFVI and its driver.
//!
//! Holds compute nodes, the RF pool and VNF liveness. Every state change
//! enters through [`Infra::apply`], which executes one [`Command`] and
//! reports an [`Outcome`] stamped at `issued_at + duration_s`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Flavor;
use crate::rf::{CarrierAssignment, Hertz, RfError, RfFrontend, SpectrumBand, SpectrumPool};
use crate::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComputeNode {
    pub node_id: String,
    pub vcpus_total: u32,
    pub ram_mb_total: u64,
    pub disk_gb_total: u64,
    #[serde(default)]
    pub allocations: BTreeMap<String, Flavor>,
}

impl ComputeNode {
    pub fn new(node_id: impl Into<String>, vcpus: u32, ram_mb: u64, disk_gb: u64) -> Self {
        Self {
            node_id: node_id.into(),
            vcpus_total: vcpus,
            ram_mb_total: ram_mb,
            disk_gb_total: disk_gb,
            allocations: BTreeMap::new(),
        }
    }

    pub fn total(&self) -> Flavor {
        Flavor::new(self.vcpus_total, self.ram_mb_total, self.disk_gb_total)
    }

    pub fn allocated(&self) -> Flavor {
        self.allocations
            .values()
            .fold(Flavor::new(0, 0, 0), |acc, f| {
                Flavor::new(
                    acc.vcpus + f.vcpus,
                    acc.ram_mb + f.ram_mb,
                    acc.disk_gb + f.disk_gb,
                )
            })
    }

    pub fn free(&self) -> Flavor {
        let a = self.allocated();
        Flavor::new(
            self.vcpus_total.saturating_sub(a.vcpus),
            self.ram_mb_total.saturating_sub(a.ram_mb),
            self.disk_gb_total.saturating_sub(a.disk_gb),
        )
    }

    pub fn fits(&self, f: &Flavor) -> bool {
        fits(&self.free(), f)
    }

    pub fn within_capacity(&self) -> bool {
        let a = self.allocated();
        a.vcpus <= self.vcpus_total
            && a.ram_mb <= self.ram_mb_total
            && a.disk_gb <= self.disk_gb_total
    }
}

fn fits(free: &Flavor, f: &Flavor) -> bool {
    f.vcpus <= free.vcpus && f.ram_mb <= free.ram_mb && f.disk_gb <= free.disk_gb
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("Infeasible placement")]
pub struct Infeasible;

/// First-fit decreasing placement.
///
/// Demands are visited by vcpus descending, then ram descending, then input
/// order; each goes to the first node (input order) with room in all three
/// dimensions, accounting for existing allocations.
pub fn place(demands: &[Flavor], nodes: &[ComputeNode]) -> Result<Vec<String>, Infeasible> {
    let mut order: Vec<usize> = (0..demands.len()).collect();
    order.sort_by(|&a, &b| {
        demands[b]
            .vcpus
            .cmp(&demands[a].vcpus)
            .then(demands[b].ram_mb.cmp(&demands[a].ram_mb))
    });
    let mut free: Vec<Flavor> = nodes.iter().map(ComputeNode::free).collect();
    let mut out = vec![String::new(); demands.len()];
    for i in order {
        let d = &demands[i];
        let slot = free.iter().position(|f| fits(f, d)).ok_or(Infeasible)?;
        let f = &mut free[slot];
        f.vcpus -= d.vcpus;
        f.ram_mb -= d.ram_mb;
        f.disk_gb -= d.disk_gb;
        out[i] = nodes[slot].node_id.clone();
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    AllocateCompute,
    FreeCompute,
    BootVnf,
    StopVnf,
    AssignCarrier,
    ReleaseCarrier,
    LinkVnfs,
    UnlinkVnfs,
}

impl CommandKind {
    pub fn is_teardown(self) -> bool {
        matches!(
            self,
            CommandKind::FreeCompute
                | CommandKind::StopVnf
                | CommandKind::ReleaseCarrier
                | CommandKind::UnlinkVnfs
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Operation {
    AllocateCompute {
        vnf_id: String,
        node_id: String,
        flavor: Flavor,
    },
    FreeCompute {
        vnf_id: String,
    },
    BootVnf {
        vnf_id: String,
    },
    StopVnf {
        vnf_id: String,
    },
    AssignCarrier {
        bw_hz: Hertz,
    },
    ReleaseCarrier {
        assignment_id: u64,
    },
    LinkVnfs {
        link_id: String,
        vnf_ids: Vec<String>,
    },
    UnlinkVnfs {
        link_id: String,
    },
}

impl Operation {
    pub fn kind(&self) -> CommandKind {
        match self {
            Operation::AllocateCompute { .. } => CommandKind::AllocateCompute,
            Operation::FreeCompute { .. } => CommandKind::FreeCompute,
            Operation::BootVnf { .. } => CommandKind::BootVnf,
            Operation::StopVnf { .. } => CommandKind::StopVnf,
            Operation::AssignCarrier { .. } => CommandKind::AssignCarrier,
            Operation::ReleaseCarrier { .. } => CommandKind::ReleaseCarrier,
            Operation::LinkVnfs { .. } => CommandKind::LinkVnfs,
            Operation::UnlinkVnfs { .. } => CommandKind::UnlinkVnfs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub command_id: u64,
    pub ns_id: String,
    pub op: Operation,
    pub duration_s: f64,
}

/// Simulated execution time per command kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Durations {
    pub allocate_compute: f64,
    pub free_compute: f64,
    pub boot_vnf: f64,
    pub stop_vnf: f64,
    pub assign_carrier: f64,
    pub release_carrier: f64,
    pub link_vnfs: f64,
    pub unlink_vnfs: f64,
}

impl Default for Durations {
    fn default() -> Self {
        Self {
            allocate_compute: 1.0,
            free_compute: 1.0,
            boot_vnf: 10.0,
            stop_vnf: 5.0,
            assign_carrier: 1.0,
            release_carrier: 1.0,
            link_vnfs: 1.0,
            unlink_vnfs: 1.0,
        }
    }
}

impl Durations {
    pub fn of(&self, kind: CommandKind) -> f64 {
        match kind {
            CommandKind::AllocateCompute => self.allocate_compute,
            CommandKind::FreeCompute => self.free_compute,
            CommandKind::BootVnf => self.boot_vnf,
            CommandKind::StopVnf => self.stop_vnf,
            CommandKind::AssignCarrier => self.assign_carrier,
            CommandKind::ReleaseCarrier => self.release_carrier,
            CommandKind::LinkVnfs => self.link_vnfs,
            CommandKind::UnlinkVnfs => self.unlink_vnfs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub command_id: u64,
    pub status: OutcomeStatus,
    pub detail: String,
    pub completed_at: SimTime,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub carrier: Option<CarrierAssignment>,
}

impl Outcome {
    pub fn is_done(&self) -> bool {
        self.status == OutcomeStatus::Done
    }

    fn done(cmd: &Command, at: SimTime) -> Self {
        Self {
            command_id: cmd.command_id,
            status: OutcomeStatus::Done,
            detail: String::new(),
            completed_at: at,
            carrier: None,
        }
    }

    pub fn failed(command_id: u64, at: SimTime, detail: impl Into<String>) -> Self {
        let detail = detail.into();
        debug_assert!(!detail.is_empty());
        Self {
            command_id,
            status: OutcomeStatus::Failed,
            detail,
            completed_at: at,
            carrier: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum InventoryError {
    #[error("inventory file {0}: {1}")]
    Io(String, std::io::Error),
    #[error("inventory parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid inventory: {0}")]
    Invalid(String),
}

/// Startup inventory of nodes, RF frontends and spectrum bands.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Inventory {
    pub nodes: Vec<ComputeNode>,
    #[serde(default)]
    pub frontends: Vec<RfFrontend>,
    #[serde(default)]
    pub bands: Vec<SpectrumBand>,
}

impl Inventory {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, InventoryError> {
        let path = path.as_ref();
        let bytes =
            fs::read(path).map_err(|e| InventoryError::Io(path.display().to_string(), e))?;
        let inv: Inventory = serde_json::from_slice(&bytes)?;
        inv.validate()?;
        Ok(inv)
    }

    pub fn validate(&self) -> Result<(), InventoryError> {
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(&n.node_id) {
                return Err(InventoryError::Invalid(format!(
                    "duplicate node {}",
                    n.node_id
                )));
            }
            if !n.within_capacity() {
                return Err(InventoryError::Invalid(format!(
                    "node {} over capacity",
                    n.node_id
                )));
            }
        }
        for f in &self.frontends {
            if !f.is_valid() {
                return Err(InventoryError::Invalid(format!(
                    "frontend {}",
                    f.frontend_id
                )));
            }
        }
        for b in &self.bands {
            b.validate()
                .map_err(|e| InventoryError::Invalid(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCapacity {
    pub node_id: String,
    pub total: Flavor,
    pub allocated: Flavor,
    pub free: Flavor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Infra {
    nodes: Vec<ComputeNode>,
    spectrum: SpectrumPool,
    booted: BTreeSet<String>,
    links: BTreeMap<String, Vec<String>>,
}

impl Infra {
    pub fn new(inventory: Inventory) -> Result<Self, InventoryError> {
        inventory.validate()?;
        let spectrum = SpectrumPool::new(inventory.bands, inventory.frontends)
            .map_err(|e: RfError| InventoryError::Invalid(e.to_string()))?;
        Ok(Self {
            nodes: inventory.nodes,
            spectrum,
            booted: BTreeSet::new(),
            links: BTreeMap::new(),
        })
    }

    pub fn nodes(&self) -> &[ComputeNode] {
        &self.nodes
    }

    pub fn spectrum(&self) -> &SpectrumPool {
        &self.spectrum
    }

    pub fn spectrum_mut(&mut self) -> &mut SpectrumPool {
        &mut self.spectrum
    }

    pub fn is_booted(&self, vnf_id: &str) -> bool {
        self.booted.contains(vnf_id)
    }

    pub fn has_link(&self, link_id: &str) -> bool {
        self.links.contains_key(link_id)
    }

    pub fn allocation_of(&self, vnf_id: &str) -> Option<(&str, Flavor)> {
        self.nodes
            .iter()
            .find_map(|n| n.allocations.get(vnf_id).map(|f| (n.node_id.as_str(), *f)))
    }

    pub fn capacity_report(&self) -> Vec<NodeCapacity> {
        self.nodes
            .iter()
            .map(|n| NodeCapacity {
                node_id: n.node_id.clone(),
                total: n.total(),
                allocated: n.allocated(),
                free: n.free(),
            })
            .collect()
    }

    /// Execute `cmd`; state changes land at `issued_at + duration_s`.
    pub fn apply(&mut self, cmd: &Command, issued_at: SimTime) -> Outcome {
        let at = issued_at + cmd.duration_s;
        match self.execute(cmd) {
            Ok(carrier) => Outcome {
                carrier,
                ..Outcome::done(cmd, at)
            },
            Err(detail) => Outcome::failed(cmd.command_id, at, detail),
        }
    }

    fn execute(&mut self, cmd: &Command) -> Result<Option<CarrierAssignment>, String> {
        match &cmd.op {
            Operation::AllocateCompute {
                vnf_id,
                node_id,
                flavor,
            } => {
                if self.allocation_of(vnf_id).is_some() {
                    return Err(format!("{vnf_id} already allocated"));
                }
                let node = self
                    .nodes
                    .iter_mut()
                    .find(|n| &n.node_id == node_id)
                    .ok_or_else(|| format!("no such node {node_id}"))?;
                if !node.fits(flavor) {
                    return Err(format!("insufficient capacity on {node_id}"));
                }
                node.allocations.insert(vnf_id.clone(), *flavor);
                Ok(None)
            }
            Operation::FreeCompute { vnf_id } => {
                if self.booted.contains(vnf_id) {
                    return Err(format!("{vnf_id} still running"));
                }
                let node = self
                    .nodes
                    .iter_mut()
                    .find(|n| n.allocations.contains_key(vnf_id))
                    .ok_or_else(|| "no such allocation".to_string())?;
                node.allocations.remove(vnf_id);
                Ok(None)
            }
            Operation::BootVnf { vnf_id } => {
                if self.allocation_of(vnf_id).is_none() {
                    return Err(format!("{vnf_id} has no allocation"));
                }
                if !self.booted.insert(vnf_id.clone()) {
                    return Err(format!("{vnf_id} already running"));
                }
                Ok(None)
            }
            Operation::StopVnf { vnf_id } => {
                if self.links.values().any(|l| l.contains(vnf_id)) {
                    return Err(format!("{vnf_id} still linked"));
                }
                if !self.booted.remove(vnf_id) {
                    return Err(format!("{vnf_id} not running"));
                }
                Ok(None)
            }
            Operation::AssignCarrier { bw_hz } => self
                .spectrum
                .assign_any(*bw_hz, &cmd.ns_id)
                .map(Some)
                .map_err(|e| e.to_string()),
            Operation::ReleaseCarrier { assignment_id } => {
                match self.spectrum.get(*assignment_id) {
                    Some(a) if a.owner_ns_id != cmd.ns_id => {
                        return Err(format!(
                            "carrier {assignment_id} not owned by {}",
                            cmd.ns_id
                        ))
                    }
                    _ => {}
                }
                self.spectrum
                    .release_carrier(*assignment_id)
                    .map(Some)
                    .map_err(|e| e.to_string())
            }
            Operation::LinkVnfs { link_id, vnf_ids } => {
                if self.links.contains_key(link_id) {
                    return Err(format!("link {link_id} already up"));
                }
                if let Some(v) = vnf_ids.iter().find(|v| !self.booted.contains(*v)) {
                    return Err(format!("{v} not running"));
                }
                self.links.insert(link_id.clone(), vnf_ids.clone());
                Ok(None)
            }
            Operation::UnlinkVnfs { link_id } => self
                .links
                .remove(link_id)
                .map(|_| None)
                .ok_or_else(|| format!("no such link {link_id}")),
        }
    }

    /// Allocations, carriers, running VNFs and links owned by `ns_id`.
    pub fn footprint_of(&self, ns_id: &str) -> Footprint {
        let prefix = format!("{ns_id}.");
        Footprint {
            allocations: self
                .nodes
                .iter()
                .flat_map(|n| n.allocations.keys())
                .filter(|k| k.starts_with(&prefix))
                .cloned()
                .collect(),
            carriers: self
                .spectrum
                .assignments()
                .filter(|a| a.owner_ns_id == ns_id)
                .map(|a| a.assignment_id)
                .collect(),
            booted: self
                .booted
                .iter()
                .filter(|k| k.starts_with(&prefix))
                .cloned()
                .collect(),
            links: self
                .links
                .keys()
                .filter(|k| k.starts_with(&prefix))
                .cloned()
                .collect(),
        }
    }
}

/// Resources attributed to one NS (VNF and link ids are prefixed `ns_id.`).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Footprint {
    pub allocations: Vec<String>,
    pub carriers: Vec<u64>,
    pub booted: Vec<String>,
    pub links: Vec<String>,
}

impl Footprint {
    pub fn is_empty(&self) -> bool {
        self.allocations.is_empty()
            && self.carriers.is_empty()
            && self.booted.is_empty()
            && self.links.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn infra(nodes: Vec<ComputeNode>) -> Infra {
        Infra::new(Inventory {
            nodes,
            frontends: vec![],
            bands: vec![],
        })
        .unwrap()
    }

    fn cmd(op: Operation, duration_s: f64) -> Command {
        Command {
            command_id: 1,
            ns_id: "ns-1".into(),
            op,
            duration_s,
        }
    }

    #[test]
    fn ffd_single_node() {
        let nodes = [ComputeNode::new("n0", 4, 8000, 100)];
        assert_eq!(
            place(&[Flavor::new(2, 3600, 8)], &nodes).unwrap(),
            vec!["n0"]
        );
    }

    #[test]
    fn ffd_hand_trace() {
        let nodes = [
            ComputeNode::new("a", 3, 10_000, 100),
            ComputeNode::new("b", 2, 10_000, 100),
        ];
        let demands = [
            Flavor::new(2, 1000, 1),
            Flavor::new(2, 1000, 1),
            Flavor::new(1, 1000, 1),
        ];
        assert_eq!(place(&demands, &nodes).unwrap(), vec!["a", "b", "a"]);
    }

    #[test]
    fn ffd_tie_break_prefers_larger_ram() {
        let nodes = [
            ComputeNode::new("a", 2, 4000, 100),
            ComputeNode::new("b", 2, 4000, 100),
        ];
        let demands = [Flavor::new(2, 1000, 1), Flavor::new(2, 3000, 1)];
        assert_eq!(place(&demands, &nodes).unwrap(), vec!["b", "a"]);
    }

    #[test]
    fn ffd_infeasible() {
        let nodes = [
            ComputeNode::new("a", 4, 64_000, 100),
            ComputeNode::new("b", 4, 64_000, 100),
        ];
        assert_eq!(place(&[Flavor::new(8, 1, 1)], &nodes), Err(Infeasible));
    }

    #[test]
    fn allocate_then_free() {
        let mut inf = infra(vec![ComputeNode::new("n0", 4, 8000, 100)]);
        let before = inf.capacity_report();
        assert!(before.iter().all(|n| n.allocated == Flavor::new(0, 0, 0)));
        let o = inf.apply(
            &cmd(
                Operation::AllocateCompute {
                    vnf_id: "ns-1.enb.0".into(),
                    node_id: "n0".into(),
                    flavor: Flavor::new(2, 3600, 8),
                },
                1.0,
            ),
            0.0,
        );
        assert!(o.is_done());
        assert_eq!(inf.capacity_report()[0].free.vcpus, 2);
        let o = inf.apply(
            &cmd(
                Operation::FreeCompute {
                    vnf_id: "ns-1.enb.0".into(),
                },
                1.0,
            ),
            1.0,
        );
        assert!(o.is_done());
        assert_eq!(inf.capacity_report(), before);
    }

    #[test]
    fn free_unknown_fails() {
        let mut inf = infra(vec![ComputeNode::new("n0", 4, 8000, 100)]);
        let o = inf.apply(
            &cmd(
                Operation::FreeCompute {
                    vnf_id: "ghost".into(),
                },
                1.0,
            ),
            0.0,
        );
        assert_eq!(o.status, OutcomeStatus::Failed);
        assert_eq!(o.detail, "no such allocation");
    }

    #[test]
    fn boot_completion_time_is_additive() {
        let mut inf = infra(vec![ComputeNode::new("n0", 4, 8000, 100)]);
        inf.apply(
            &cmd(
                Operation::AllocateCompute {
                    vnf_id: "v".into(),
                    node_id: "n0".into(),
                    flavor: Flavor::new(1, 1500, 8),
                },
                1.0,
            ),
            0.0,
        );
        let o = inf.apply(&cmd(Operation::BootVnf { vnf_id: "v".into() }, 10.0), 0.0);
        assert!(o.is_done());
        assert_eq!(o.completed_at, 10.0);
        assert!(inf.is_booted("v"));
    }

    #[test]
    fn overcommit_rejected() {
        let mut inf = infra(vec![ComputeNode::new("n0", 2, 8000, 100)]);
        let alloc = |id: &str| {
            cmd(
                Operation::AllocateCompute {
                    vnf_id: id.into(),
                    node_id: "n0".into(),
                    flavor: Flavor::new(2, 100, 1),
                },
                1.0,
            )
        };
        assert!(inf.apply(&alloc("a"), 0.0).is_done());
        let o = inf.apply(&alloc("b"), 0.0);
        assert!(!o.is_done());
        assert!(inf.nodes()[0].within_capacity());
    }

    #[test]
    fn inventory_rejects_bad_frontend() {
        let inv = Inventory {
            nodes: vec![],
            frontends: vec![RfFrontend {
                frontend_id: "f".into(),
                site_id: "s".into(),
                freq_min_hz: 10,
                freq_max_hz: 5,
                max_bw_hz: 1,
            }],
            bands: vec![],
        };
        assert!(Infra::new(inv).is_err());
    }
}
