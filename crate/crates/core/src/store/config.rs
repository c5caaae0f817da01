use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use super::StoreError;
use crate::dht::{DhtId, OverlayKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    Centralized,
    P2p,
}

impl FromStr for Backend {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, StoreError> {
        match s {
            "centralized" => Ok(Backend::Centralized),
            "p2p" => Ok(Backend::P2p),
            _ => Err(StoreError::Config(format!("unknown backend {s:?}"))),
        }
    }
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backend::Centralized => "centralized",
            Backend::P2p => "p2p",
        })
    }
}

/// Flat `key = value` configuration. Unset keys keep their defaults:
/// centralized backend, 4 peers, overlays `1:hash,2:range`, no extra
/// resource elements, seed 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoreConfig {
    pub backend: Backend,
    pub peer_count: u64,
    pub overlays: Vec<(DhtId, OverlayKind)>,
    pub resource_granularity: BTreeSet<String>,
    pub snapshot_path: Option<PathBuf>,
    pub seed: u64,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Centralized,
            peer_count: 4,
            overlays: vec![(DhtId(1), OverlayKind::Hash), (DhtId(2), OverlayKind::Range)],
            resource_granularity: BTreeSet::new(),
            snapshot_path: None,
            seed: 0,
        }
    }
}

fn parse_overlays(value: &str) -> Result<Vec<(DhtId, OverlayKind)>, StoreError> {
    let mut out = Vec::new();
    for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let bad = || StoreError::Config(format!("overlay {item:?} is not <id>:hash or <id>:range"));
        let (id, kind) = item.split_once(':').ok_or_else(bad)?;
        let id = DhtId(id.trim().parse().map_err(|_| bad())?);
        let kind = match kind.trim() {
            "hash" => OverlayKind::Hash,
            "range" => OverlayKind::Range,
            _ => return Err(bad()),
        };
        if out.iter().any(|(d, _)| *d == id) {
            return Err(StoreError::Config(format!("overlay {id} listed twice")));
        }
        out.push((id, kind));
    }
    Ok(out)
}

impl StoreConfig {
    pub fn parse(text: &str) -> Result<Self, StoreError> {
        let mut c = StoreConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| StoreError::Config(format!("line {}: expected key=value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let number = |v: &str| {
                v.parse::<u64>()
                    .map_err(|_| StoreError::Config(format!("{key}: {v:?} is not a non-negative integer")))
            };
            match key {
                "backend" => c.backend = value.parse()?,
                "peer_count" => c.peer_count = number(value)?,
                "overlays" => c.overlays = parse_overlays(value)?,
                "resource_granularity" => {
                    c.resource_granularity = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(String::from)
                        .collect()
                }
                "snapshot_path" => c.snapshot_path = (!value.is_empty()).then(|| PathBuf::from(value)),
                "seed" => c.seed = number(value)?,
                _ => return Err(StoreError::Config(format!("unknown key {key:?}"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        if self.peer_count == 0 {
            return Err(StoreError::Config("peer_count must be positive".into()));
        }
        if self.backend == Backend::P2p && self.hash_overlay().is_none() {
            return Err(StoreError::Config("the p2p backend needs a hash overlay".into()));
        }
        Ok(())
    }

    pub fn hash_overlay(&self) -> Option<DhtId> {
        self.overlays.iter().find(|(_, k)| *k == OverlayKind::Hash).map(|(d, _)| *d)
    }

    pub fn range_overlay(&self) -> Option<DhtId> {
        self.overlays.iter().find(|(_, k)| *k == OverlayKind::Range).map(|(d, _)| *d)
    }

    /// Text that [`StoreConfig::parse`] reads back to an equal value.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "backend = {}", self.backend);
        let _ = writeln!(out, "peer_count = {}", self.peer_count);
        let overlays: Vec<String> = self.overlays.iter().map(|(d, k)| format!("{d}:{k}")).collect();
        let _ = writeln!(out, "overlays = {}", overlays.join(","));
        let names: Vec<&str> = self.resource_granularity.iter().map(String::as_str).collect();
        let _ = writeln!(out, "resource_granularity = {}", names.join(","));
        if let Some(p) = &self.snapshot_path {
            let _ = writeln!(out, "snapshot_path = {}", p.display());
        }
        let _ = writeln!(out, "seed = {}", self.seed);
        out
    }
}
