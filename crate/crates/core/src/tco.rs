//! Equipment catalogs, bills of materials, topology sizing, power cost and
//! amortized yearly cost of ownership.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul};

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

pub const HOURS_PER_YEAR: f64 = 8760.0;

const SHIPPED_CATALOG: &str = include_str!("../data/catalogs/edge-datacenter.toml");

#[derive(Debug, Error)]
pub enum TcoError {
    #[error("catalog parse error: {0}")]
    Parse(String),
    #[error("catalog has no items")]
    EmptyCatalog,
    #[error("catalog has no `{0}` design section")]
    MissingDesign(&'static str),
    #[error("sku `{0}` is not in the catalog")]
    MissingSku(String),
    #[error("switch port count must be even and at least 2, got {0}")]
    InvalidPorts(u32),
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("cannot read catalog {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Whole US cents.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cents(pub i64);

impl Cents {
    pub fn from_dollars(d: f64) -> Self {
        Cents((d * 100.0).round() as i64)
    }

    pub fn dollars(self) -> f64 {
        self.0 as f64 / 100.0
    }

    /// Divides, rounding half away from zero.
    pub fn div_round(self, by: i64) -> Cents {
        let q = self.0 / by;
        let r = self.0 % by;
        if 2 * r.abs() >= by.abs() {
            Cents(q + self.0.signum() * by.signum())
        } else {
            Cents(q)
        }
    }
}

impl Add for Cents {
    type Output = Cents;
    fn add(self, o: Cents) -> Cents {
        Cents(self.0 + o.0)
    }
}

impl Mul<u64> for Cents {
    type Output = Cents;
    fn mul(self, q: u64) -> Cents {
        Cents(self.0 * q as i64)
    }
}

impl std::iter::Sum for Cents {
    fn sum<I: Iterator<Item = Cents>>(iter: I) -> Cents {
        iter.fold(Cents(0), Add::add)
    }
}

impl fmt::Display for Cents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let neg = self.0 < 0;
        let abs = self.0.unsigned_abs();
        let whole = (abs / 100).to_string();
        let mut grouped = String::new();
        for (i, c) in whole.chars().enumerate() {
            if i > 0 && (whole.len() - i) % 3 == 0 {
                grouped.push(',');
            }
            grouped.push(c);
        }
        let sign = if neg { "-" } else { "" };
        if abs % 100 == 0 {
            write!(f, "{sign}${grouped}")
        } else {
            write!(f, "{sign}${grouped}.{:02}", abs % 100)
        }
    }
}

impl Serialize for Cents {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.dollars())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CatalogItem {
    pub sku: String,
    pub description: String,
    pub unit_price: Cents,
    /// Watts; 0 when unknown.
    pub unit_power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BomLine {
    pub item: CatalogItem,
    pub quantity: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BillOfMaterials {
    pub lines: Vec<BomLine>,
}

impl BillOfMaterials {
    pub fn push(&mut self, item: &CatalogItem, quantity: u64) {
        self.lines.push(BomLine {
            item: item.clone(),
            quantity,
        });
    }

    pub fn quantity_of(&self, sku: &str) -> u64 {
        self.lines
            .iter()
            .filter(|l| l.item.sku == sku)
            .map(|l| l.quantity)
            .sum()
    }

    /// Sum of nameplate power, kilowatts.
    pub fn nameplate_kw(&self) -> f64 {
        self.lines
            .iter()
            .map(|l| l.item.unit_power * l.quantity as f64)
            .sum::<f64>()
            / 1000.0
    }
}

/// Sum of quantity x unit price, exact in cents.
pub fn bom_total(bom: &BillOfMaterials) -> Cents {
    bom.lines.iter().map(|l| l.item.unit_price * l.quantity).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FatTreeSize {
    pub edge: u64,
    pub aggregation: u64,
    pub core: u64,
    pub switches: u64,
    pub cables: u64,
}

/// Three-level non-blocking fat tree built from `switch_ports`-port switches.
pub fn fat_tree_size(nodes: u64, switch_ports: u32) -> Result<FatTreeSize, TcoError> {
    if switch_ports < 2 || switch_ports % 2 != 0 {
        return Err(TcoError::InvalidPorts(switch_ports));
    }
    let ports = switch_ports as u64;
    if nodes == 0 {
        return Ok(FatTreeSize {
            edge: 0,
            aggregation: 0,
            core: 0,
            switches: 0,
            cables: 0,
        });
    }
    if nodes <= ports {
        return Ok(FatTreeSize {
            edge: 1,
            aggregation: 0,
            core: 0,
            switches: 1,
            cables: nodes,
        });
    }
    let edge = nodes.div_ceil(ports / 2);
    let aggregation = edge;
    let core = edge.div_ceil(2);
    Ok(FatTreeSize {
        edge,
        aggregation,
        core,
        switches: edge + aggregation + core,
        cables: 3 * nodes,
    })
}

/// `total_kw x rate x hours`, rounded to the cent.
pub fn power_cost(total_kw: f64, rate_per_kwh: f64, hours: f64) -> Cents {
    Cents::from_dollars(total_kw * rate_per_kwh * hours)
}

/// IT load plus cooling, where cooling draws `cooling_factor` x IT load.
pub fn facility_kw(it_kw: f64, cooling_factor: f64) -> f64 {
    it_kw * (1.0 + cooling_factor)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerInput {
    /// IT load, kilowatts.
    #[serde(default)]
    pub it_kw: Option<f64>,
    #[serde(default = "default_cooling")]
    pub cooling_factor: f64,
    #[serde(default = "default_rate")]
    pub rate_per_kwh: f64,
    #[serde(default = "default_hours")]
    pub hours_per_year: f64,
    /// Direct yearly power cost in dollars; overrides the load figures.
    #[serde(default)]
    pub yearly_cost: Option<f64>,
}

fn default_cooling() -> f64 {
    1.0
}
fn default_rate() -> f64 {
    0.10
}
fn default_hours() -> f64 {
    HOURS_PER_YEAR
}

impl PowerInput {
    pub fn from_it_load(it_kw: f64) -> Self {
        Self {
            it_kw: Some(it_kw),
            cooling_factor: default_cooling(),
            rate_per_kwh: default_rate(),
            hours_per_year: HOURS_PER_YEAR,
            yearly_cost: None,
        }
    }

    pub fn from_yearly_cost(dollars: f64) -> Self {
        Self {
            it_kw: None,
            cooling_factor: default_cooling(),
            rate_per_kwh: default_rate(),
            hours_per_year: HOURS_PER_YEAR,
            yearly_cost: Some(dollars),
        }
    }

    pub fn facility_kw(&self) -> Option<f64> {
        self.it_kw.map(|kw| facility_kw(kw, self.cooling_factor))
    }

    pub fn yearly(&self) -> Result<Cents, TcoError> {
        if let Some(c) = self.yearly_cost {
            if !(c >= 0.0) {
                return Err(TcoError::InvalidDesign("power yearly_cost must be >= 0".into()));
            }
            return Ok(Cents::from_dollars(c));
        }
        let kw = self
            .facility_kw()
            .ok_or_else(|| TcoError::InvalidDesign("power needs it_kw or yearly_cost".into()))?;
        if !(kw >= 0.0 && self.rate_per_kwh >= 0.0 && self.hours_per_year >= 0.0) {
            return Err(TcoError::InvalidDesign("power inputs must be >= 0".into()));
        }
        Ok(power_cost(kw, self.rate_per_kwh, self.hours_per_year))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TcoReport {
    pub design: String,
    pub equipment_total: Cents,
    pub amortization_years: u32,
    pub amortized_equipment_per_year: Cents,
    pub overhead_factor: f64,
    pub power_kw: Option<f64>,
    pub power_cost_per_year: Cents,
    pub yearly_total: Cents,
    /// `1 - this / baseline` on yearly totals.
    pub delta_vs_baseline: Option<f64>,
}

impl TcoReport {
    pub fn with_baseline(mut self, baseline: &TcoReport) -> Self {
        self.delta_vs_baseline =
            Some(1.0 - self.yearly_total.0 as f64 / baseline.yearly_total.0 as f64);
        self
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let row = |s: &mut String, k: &str, v: String| s.push_str(&format!("  {k:<30} {v:>16}\n"));
        s.push_str(&format!("{}\n", self.design));
        row(&mut s, "equipment total", self.equipment_total.to_string());
        row(
            &mut s,
            &format!("amortized / year ({} yr)", self.amortization_years),
            self.amortized_equipment_per_year.to_string(),
        );
        if let Some(kw) = self.power_kw {
            row(&mut s, "facility power (kW)", format!("{kw:.1}"));
        }
        row(&mut s, "power / year", self.power_cost_per_year.to_string());
        row(&mut s, "yearly total", self.yearly_total.to_string());
        if let Some(d) = self.delta_vs_baseline {
            row(&mut s, "delta vs baseline", format!("{:.1}%", d * 100.0));
        }
        s
    }
}

/// Amortized equipment (scaled by `1 + overhead_factor`) plus yearly power.
pub fn yearly_tco(
    design: &str,
    bom: &BillOfMaterials,
    amortization_years: u32,
    power: &PowerInput,
    overhead_factor: f64,
) -> Result<TcoReport, TcoError> {
    if amortization_years == 0 {
        return Err(TcoError::InvalidDesign("amortization_years must be > 0".into()));
    }
    let equipment_total = bom_total(bom);
    let amortized = equipment_total.div_round(amortization_years as i64);
    let power_cost_per_year = power.yearly()?;
    let with_overhead = Cents::from_dollars(amortized.dollars() * (1.0 + overhead_factor));
    Ok(TcoReport {
        design: design.into(),
        equipment_total,
        amortization_years,
        amortized_equipment_per_year: amortized,
        overhead_factor,
        power_kw: if power.yearly_cost.is_some() {
            None
        } else {
            power.facility_kw()
        },
        power_cost_per_year,
        yearly_total: with_overhead + power_cost_per_year,
        delta_vs_baseline: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemRef {
    pub sku: String,
    pub quantity: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomogeneousDesign {
    pub nodes: u64,
    pub switch_ports: u32,
    pub switch_sku: String,
    pub cable_sku: String,
    pub amortization_years: u32,
    pub node_items: Vec<ItemRef>,
    pub power: PowerInput,
}

/// Sizing constants for the splitter-based two-tier network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitterRules {
    pub edge_switch_sku: String,
    pub access_switch_sku: String,
    pub access_uplink_splitter_sku: String,
    pub compute_splitter_sku: String,
    pub broker_splitter_sku: String,
    pub interconnect_sku: String,
    pub compute_nodes_per_splitter: u64,
    pub brokers_per_splitter: u64,
    pub compute_nodes_per_access_switch: u64,
    pub access_switches_per_edge_switch: u64,
    pub brokers_per_edge_switch: u64,
    pub edge_uplinks: u64,
    pub access_uplink_splitters_per_edge_switch: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PurposeBuiltDesign {
    pub compute_nodes: u64,
    pub broker_nodes: u64,
    pub amortization_years: u32,
    pub compute_items: Vec<ItemRef>,
    pub broker_items: Vec<ItemRef>,
    pub power: PowerInput,
    pub rules: SplitterRules,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ItemDocument {
    sku: String,
    #[serde(default)]
    description: String,
    unit_price: f64,
    #[serde(default)]
    unit_power: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogDocument {
    #[serde(default)]
    items: Vec<ItemDocument>,
    homogeneous: Option<HomogeneousDesign>,
    purpose_built: Option<PurposeBuiltDesign>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub items: BTreeMap<String, CatalogItem>,
    pub homogeneous: Option<HomogeneousDesign>,
    pub purpose_built: Option<PurposeBuiltDesign>,
}

impl Catalog {
    pub fn parse(text: &str) -> Result<Self, TcoError> {
        let doc: CatalogDocument = toml::from_str(text).map_err(|e| TcoError::Parse(e.to_string()))?;
        if doc.items.is_empty() {
            return Err(TcoError::EmptyCatalog);
        }
        let mut items = BTreeMap::new();
        for it in doc.items {
            if !(it.unit_price >= 0.0) || !(it.unit_power >= 0.0) {
                return Err(TcoError::InvalidDesign(format!(
                    "item `{}` needs non-negative price and power",
                    it.sku
                )));
            }
            items.insert(
                it.sku.clone(),
                CatalogItem {
                    sku: it.sku,
                    description: it.description,
                    unit_price: Cents::from_dollars(it.unit_price),
                    unit_power: it.unit_power,
                },
            );
        }
        Ok(Self {
            items,
            homogeneous: doc.homogeneous,
            purpose_built: doc.purpose_built,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, TcoError> {
        let text = std::fs::read_to_string(path).map_err(|source| TcoError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn shipped() -> Self {
        Self::parse(SHIPPED_CATALOG).expect("shipped catalog parses")
    }

    pub fn item(&self, sku: &str) -> Result<&CatalogItem, TcoError> {
        self.items
            .get(sku)
            .ok_or_else(|| TcoError::MissingSku(sku.into()))
    }

    fn push_refs(
        &self,
        bom: &mut BillOfMaterials,
        refs: &[ItemRef],
        per: u64,
    ) -> Result<(), TcoError> {
        for r in refs {
            bom.push(self.item(&r.sku)?, r.quantity * per);
        }
        Ok(())
    }
}

/// Identical nodes with a single drive and 100 GbE, on a fat tree.
pub fn homogeneous_bom(catalog: &Catalog) -> Result<BillOfMaterials, TcoError> {
    let d = catalog
        .homogeneous
        .as_ref()
        .ok_or(TcoError::MissingDesign("homogeneous"))?;
    let mut bom = BillOfMaterials::default();
    catalog.push_refs(&mut bom, &d.node_items, d.nodes)?;
    let tree = fat_tree_size(d.nodes, d.switch_ports)?;
    bom.push(catalog.item(&d.switch_sku)?, tree.switches);
    bom.push(catalog.item(&d.cable_sku)?, tree.cables);
    Ok(bom)
}

/// Switch and splitter counts of the purpose-built network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PurposeBuiltNetwork {
    pub access_switches: u64,
    pub compute_edge_switches: u64,
    pub broker_edge_switches: u64,
    pub core_switches: u64,
    pub edge_class_switches: u64,
    pub compute_splitters: u64,
    pub broker_splitters: u64,
    pub access_uplink_splitters: u64,
    pub interconnects: u64,
}

pub fn purpose_built_network(
    compute_nodes: u64,
    broker_nodes: u64,
    rules: &SplitterRules,
) -> Result<PurposeBuiltNetwork, TcoError> {
    if compute_nodes == 0 || broker_nodes == 0 {
        return Err(TcoError::InvalidDesign(
            "purpose-built design needs at least one compute node and one broker".into(),
        ));
    }
    for (name, v) in [
        ("compute_nodes_per_splitter", rules.compute_nodes_per_splitter),
        ("brokers_per_splitter", rules.brokers_per_splitter),
        ("compute_nodes_per_access_switch", rules.compute_nodes_per_access_switch),
        ("access_switches_per_edge_switch", rules.access_switches_per_edge_switch),
        ("brokers_per_edge_switch", rules.brokers_per_edge_switch),
    ] {
        if v == 0 {
            return Err(TcoError::InvalidDesign(format!("rule {name} must be > 0")));
        }
    }
    let access_switches = compute_nodes.div_ceil(rules.compute_nodes_per_access_switch);
    let compute_edge_switches = access_switches.div_ceil(rules.access_switches_per_edge_switch);
    let broker_edge_switches = broker_nodes.div_ceil(rules.brokers_per_edge_switch);
    let edge = compute_edge_switches + broker_edge_switches;
    // Two-level tree: every edge switch has one uplink to each core switch.
    let core_switches = rules.edge_uplinks;
    Ok(PurposeBuiltNetwork {
        access_switches,
        compute_edge_switches,
        broker_edge_switches,
        core_switches,
        edge_class_switches: edge + core_switches,
        compute_splitters: compute_nodes.div_ceil(rules.compute_nodes_per_splitter),
        broker_splitters: broker_nodes.div_ceil(rules.brokers_per_splitter),
        access_uplink_splitters: compute_edge_switches * rules.access_uplink_splitters_per_edge_switch,
        interconnects: edge * rules.edge_uplinks,
    })
}

/// Compute nodes with 10 GbE, brokers with 50 GbE and four drives, on a
/// splitter-based network.
pub fn purpose_built_bom(
    compute_nodes: u64,
    broker_nodes: u64,
    catalog: &Catalog,
) -> Result<BillOfMaterials, TcoError> {
    let d = catalog
        .purpose_built
        .as_ref()
        .ok_or(TcoError::MissingDesign("purpose_built"))?;
    let net = purpose_built_network(compute_nodes, broker_nodes, &d.rules)?;
    let r = &d.rules;
    let mut bom = BillOfMaterials::default();
    catalog.push_refs(&mut bom, &d.compute_items, compute_nodes)?;
    catalog.push_refs(&mut bom, &d.broker_items, broker_nodes)?;
    bom.push(catalog.item(&r.edge_switch_sku)?, net.edge_class_switches);
    bom.push(catalog.item(&r.access_switch_sku)?, net.access_switches);
    bom.push(catalog.item(&r.access_uplink_splitter_sku)?, net.access_uplink_splitters);
    bom.push(catalog.item(&r.compute_splitter_sku)?, net.compute_splitters);
    bom.push(catalog.item(&r.broker_splitter_sku)?, net.broker_splitters);
    bom.push(catalog.item(&r.interconnect_sku)?, net.interconnects);
    Ok(bom)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TcoComparison {
    pub homogeneous: TcoReport,
    pub purpose_built: TcoReport,
}

pub fn homogeneous_report(catalog: &Catalog, overhead_factor: f64) -> Result<TcoReport, TcoError> {
    let d = catalog
        .homogeneous
        .as_ref()
        .ok_or(TcoError::MissingDesign("homogeneous"))?;
    yearly_tco(
        "homogeneous",
        &homogeneous_bom(catalog)?,
        d.amortization_years,
        &d.power,
        overhead_factor,
    )
}

pub fn purpose_built_report(catalog: &Catalog, overhead_factor: f64) -> Result<TcoReport, TcoError> {
    let d = catalog
        .purpose_built
        .as_ref()
        .ok_or(TcoError::MissingDesign("purpose_built"))?;
    yearly_tco(
        "purpose-built",
        &purpose_built_bom(d.compute_nodes, d.broker_nodes, catalog)?,
        d.amortization_years,
        &d.power,
        overhead_factor,
    )
}

/// Both designs, with the purpose-built delta against the homogeneous one.
pub fn compare(catalog: &Catalog, overhead_factor: f64) -> Result<TcoComparison, TcoError> {
    let homogeneous = homogeneous_report(catalog, overhead_factor)?;
    let purpose_built = purpose_built_report(catalog, overhead_factor)?.with_baseline(&homogeneous);
    Ok(TcoComparison {
        homogeneous,
        purpose_built,
    })
}
