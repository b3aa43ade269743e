//! Five-compartment CO2 network: digester, atmosphere and microalgae vertices
//! joined by two virtual ducts, plus the atmosphere balance and the
//! circularity / net-zero bookkeeping built on top of it.

use std::fmt;

use crate::error::{ensure_finite, Error, Result};

/// Index triple of a compartment `c^k_{i,j}`.
///
/// Vertex compartments (stocks or transformations) have `i == j`; arc
/// compartments transport material from vertex `i` to vertex `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CompartmentId {
    pub k: u32,
    pub i: u32,
    pub j: u32,
}

impl CompartmentId {
    pub fn new(k: u32, i: u32, j: u32) -> Result<Self> {
        if k == 0 || i == 0 || j == 0 {
            return Err(Error::InvalidArgument(format!(
                "compartment indices must be positive, got ({k}, {i}, {j})"
            )));
        }
        Ok(Self { k, i, j })
    }

    pub fn kind(&self) -> CompartmentKind {
        if self.i == self.j {
            CompartmentKind::Vertex
        } else {
            CompartmentKind::Arc
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompartmentKind {
    Vertex,
    Arc,
}

impl fmt::Display for CompartmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompartmentKind::Vertex => f.write_str("vertex"),
            CompartmentKind::Arc => f.write_str("arc"),
        }
    }
}

/// Geometry of a duct between two vertex compartments.
///
/// In the network built here the ducts sit directly above the digester and the
/// cultivation, so `length` is zero and the duct faces coincide with the
/// adjacent vertex areas. Ducts carry metadata only; they have no dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualDuct {
    /// Duct length `H` in meters.
    pub length: f64,
    pub face_area_source: f64,
    pub face_area_sink: f64,
}

impl VirtualDuct {
    pub fn new(length: f64, face_area_source: f64, face_area_sink: f64) -> Result<Self> {
        if !(length >= 0.0) || !length.is_finite() {
            return Err(Error::Domain {
                what: "duct length",
                value: length,
            });
        }
        for (what, a) in [
            ("duct source face area", face_area_source),
            ("duct sink face area", face_area_sink),
        ] {
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::Domain { what, value: a });
            }
        }
        Ok(Self {
            length,
            face_area_source,
            face_area_sink,
        })
    }

    /// Duct in the zero-length limit: faces take the adjacent vertex areas.
    pub fn collapsed(source_area: f64, sink_area: f64) -> Result<Self> {
        Self::new(0.0, source_area, sink_area)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Compartment {
    pub id: CompartmentId,
    pub name: &'static str,
    pub duct: Option<VirtualDuct>,
}

/// Footprint areas of the digester and the cultivation (m²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexAreas {
    pub digester: f64,
    pub cultivation: f64,
}

impl Default for VertexAreas {
    fn default() -> Self {
        Self {
            digester: 1.0,
            cultivation: 1.0,
        }
    }
}

/// Compartmental digraph of the network. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    compartments: Vec<Compartment>,
}

pub const DIGESTER: u32 = 1;
pub const ATMOSPHERE: u32 = 2;
pub const MICROALGAE: u32 = 3;

/// Builds the digester → atmosphere → microalgae network with unit vertex areas.
pub fn build_network() -> NetworkGraph {
    NetworkGraph::with_areas(VertexAreas::default()).expect("unit areas are valid")
}

impl NetworkGraph {
    pub fn with_areas(areas: VertexAreas) -> Result<Self> {
        let id = |k, i, j| CompartmentId::new(k, i, j).expect("static ids are positive");
        let compartments = vec![
            Compartment {
                id: id(1, DIGESTER, DIGESTER),
                name: "digester",
                duct: None,
            },
            Compartment {
                id: id(2, ATMOSPHERE, ATMOSPHERE),
                name: "atmosphere",
                duct: None,
            },
            Compartment {
                id: id(3, MICROALGAE, MICROALGAE),
                name: "microalgae",
                duct: None,
            },
            Compartment {
                id: id(4, DIGESTER, ATMOSPHERE),
                name: "digester-atmosphere duct",
                duct: Some(VirtualDuct::collapsed(areas.digester, areas.digester)?),
            },
            Compartment {
                id: id(5, ATMOSPHERE, MICROALGAE),
                name: "atmosphere-microalgae duct",
                duct: Some(VirtualDuct::collapsed(areas.cultivation, areas.cultivation)?),
            },
        ];
        Ok(Self { compartments })
    }

    pub fn compartments(&self) -> &[Compartment] {
        &self.compartments
    }

    pub fn vertices(&self) -> impl Iterator<Item = &Compartment> {
        self.compartments
            .iter()
            .filter(|c| c.id.kind() == CompartmentKind::Vertex)
    }

    pub fn arcs(&self) -> impl Iterator<Item = &Compartment> {
        self.compartments
            .iter()
            .filter(|c| c.id.kind() == CompartmentKind::Arc)
    }

    pub fn compartment(&self, k: u32) -> Option<&Compartment> {
        self.compartments.iter().find(|c| c.id.k == k)
    }

    /// True when some arc carries material from vertex `i` to vertex `j`.
    pub fn has_arc(&self, i: u32, j: u32) -> bool {
        self.arcs().any(|c| c.id.i == i && c.id.j == j)
    }

    /// Plain-text edge list, one `k,i,j,kind` line per compartment.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for c in &self.compartments {
            out.push_str(&format!("{},{},{},{}\n", c.id.k, c.id.i, c.id.j, c.id.kind()));
        }
        out
    }
}

/// CO2 held in the atmosphere compartment, per liter of digester.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtmosphereState {
    /// mmol/L
    pub m2: f64,
    /// days
    pub t: f64,
}

/// Net CO2 flow into the atmosphere (mmol/d).
///
/// Both flows are per unit volume of their own compartment, so each is scaled
/// by the volume that produces or absorbs it.
pub fn atmosphere_rate(m12: f64, m23: f64, vd: f64, vm: f64) -> Result<f64> {
    for (what, v) in [("m12", m12), ("m23", m23), ("Vd", vd), ("Vm", vm)] {
        ensure_finite(what, v)?;
    }
    if !(vd > 0.0) {
        return Err(Error::InvalidArgument(format!("digester volume must be positive, got {vd}")));
    }
    if vm < 0.0 {
        return Err(Error::InvalidArgument(format!("cultivation volume must be non-negative, got {vm}")));
    }
    Ok(m12 * vd - m23 * vm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircularityResult {
    /// Dimensionless, always `<= 0`; zero is net zero.
    pub lambda: f64,
    /// Net finite-time sustainable flow, mmol/(L·d).
    pub net_flow: f64,
    /// Horizon in days.
    pub delta: f64,
}

impl CircularityResult {
    pub fn is_net_zero(&self) -> bool {
        self.lambda == 0.0
    }
}

pub const DEFAULT_HORIZON_DAYS: f64 = 1.0;

/// Circularity `λ = −net_flow·Δ`.
///
/// A negative net flow is outside the definition and is reported as a domain
/// error; use [`circularity_clamped`] for net-zero semantics.
pub fn circularity(net_flow: f64, delta: f64) -> Result<CircularityResult> {
    ensure_finite("net flow", net_flow)?;
    ensure_finite("delta", delta)?;
    if !(delta > 0.0) {
        return Err(Error::Domain {
            what: "circularity horizon",
            value: delta,
        });
    }
    if net_flow < 0.0 {
        return Err(Error::Domain {
            what: "net sustainable flow",
            value: net_flow,
        });
    }
    // 0.0 * delta is +0.0, negate afterwards would give -0.0
    let lambda = if net_flow == 0.0 { 0.0 } else { -net_flow * delta };
    Ok(CircularityResult {
        lambda,
        net_flow,
        delta,
    })
}

/// Like [`circularity`] but clamps a negative net flow (sink stronger than
/// source) to zero, logging a warning.
pub fn circularity_clamped(net_flow: f64, delta: f64) -> Result<CircularityResult> {
    ensure_finite("net flow", net_flow)?;
    if net_flow < 0.0 {
        log::warn!("net flow {net_flow} is negative; clamped to 0 (net zero)");
        return circularity(0.0, delta);
    }
    circularity(net_flow, delta)
}

/// Cultivation volume whose steady uptake exactly offsets the digester outflow.
pub fn compensation_volume(m12_ss: f64, m23_ss: f64, vd: f64) -> Result<f64> {
    ensure_finite("m12", m12_ss)?;
    ensure_finite("m23", m23_ss)?;
    ensure_finite("Vd", vd)?;
    if !(m23_ss > 0.0) {
        return Err(Error::NoCompensation { m23: m23_ss });
    }
    if !(vd > 0.0) {
        return Err(Error::InvalidArgument(format!("digester volume must be positive, got {vd}")));
    }
    Ok(m12_ss / m23_ss * vd)
}
