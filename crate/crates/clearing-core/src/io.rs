//! JSON encodings of instances, sequences and solutions.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::cfmm::{CfmmError, CustomFunction, TradingFunction};
use crate::density::{DensityError, DensityPair, HalfDensity, Shape};
use crate::market_core::{
    AssetId, BatchInstance, BatchSolution, CfmmDecl, CheckResult, InstanceOptions, LimitBuyOffer, LimitSellOffer, Participant, PriceVector,
    DEFAULT_TOL,
};
use crate::sequencer::{SequenceBatch, SequenceEntry};
use crate::solver_convex::{rational_from_json, rational_json, RationalSolution};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown asset {0}")]
    UnknownAsset(String),
    #[error("{0}")]
    Invalid(String),
    #[error("cannot encode: {0}")]
    Unencodable(String),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Cfmm(#[from] CfmmError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
enum HalfJson {
    Empty,
    Hyperbolic { alpha: f64, beta: f64 },
    Jumps { jumps: Vec<[f64; 2]> },
    Table { rates: Vec<f64>, cumulative: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum FunctionJson {
    ConstantProduct,
    WeightedProduct { wa: f64, wb: f64 },
    ConstantSum { rate: f64 },
    Lmsr,
    Monomial { exponents: Vec<f64> },
    Hspec { coeffs: Vec<f64> },
    DensityPair { forward: HalfJson, reverse: HalfJson },
    Custom { expr: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ParticipantJson {
    LimitSell { sell: String, buy: String, amount: f64, min_price: f64 },
    LimitBuy { sell: String, buy: String, endowment: f64, target: f64, max_price: f64 },
    Cfmm { id: String, assets: Vec<String>, reserves: Vec<f64>, function: FunctionJson, #[serde(default)] fee: f64 },
    CfmmRef { id: String },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct OptionsJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_iters: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InstanceJson {
    assets: Vec<String>,
    participants: Vec<ParticipantJson>,
    #[serde(default)]
    options: OptionsJson,
}

fn half_from_json(h: &HalfJson) -> Result<HalfDensity, IoError> {
    Ok(match h {
        HalfJson::Empty => HalfDensity::empty(),
        HalfJson::Hyperbolic { alpha, beta } => HalfDensity::hyperbolic(*alpha, *beta)?,
        HalfJson::Jumps { jumps } => HalfDensity::jumps(&jumps.iter().map(|[r, s]| (*r, *s)).collect::<Vec<_>>())?,
        HalfJson::Table { rates, cumulative } => HalfDensity::table(rates.clone(), cumulative.clone())?,
    })
}

fn half_to_json(h: &HalfDensity) -> Result<HalfJson, IoError> {
    Ok(match h.shape() {
        Shape::Empty => HalfJson::Empty,
        Shape::Hyperbolic { alpha, beta } => HalfJson::Hyperbolic { alpha: *alpha, beta: *beta },
        Shape::Jumps(js) => HalfJson::Jumps { jumps: js.iter().map(|j| [j.rate, j.size]).collect() },
        Shape::Table { rates, cumulative } => HalfJson::Table { rates: rates.clone(), cumulative: cumulative.clone() },
        Shape::Smooth(_) => return Err(IoError::Unencodable("sampled density halves".into())),
    })
}

fn function_from_json(f: &FunctionJson, arity: usize) -> Result<TradingFunction, IoError> {
    Ok(match f {
        FunctionJson::ConstantProduct => TradingFunction::ConstantProduct,
        FunctionJson::WeightedProduct { wa, wb } => TradingFunction::WeightedProduct { wa: *wa, wb: *wb },
        FunctionJson::ConstantSum { rate } => TradingFunction::ConstantSum { rate: *rate },
        FunctionJson::Lmsr => TradingFunction::Lmsr,
        FunctionJson::Monomial { exponents } => TradingFunction::Monomial { exponents: exponents.clone() },
        FunctionJson::Hspec { coeffs } => TradingFunction::Hspec { coeffs: coeffs.clone() },
        FunctionJson::DensityPair { forward, reverse } => {
            TradingFunction::DensityPair(Arc::new(DensityPair::new(half_from_json(forward)?, half_from_json(reverse)?)))
        }
        FunctionJson::Custom { expr } => TradingFunction::Custom(CustomFunction::from_expr(expr, arity)?),
    })
}

fn function_to_json(f: &TradingFunction) -> Result<FunctionJson, IoError> {
    Ok(match f {
        TradingFunction::ConstantProduct => FunctionJson::ConstantProduct,
        TradingFunction::WeightedProduct { wa, wb } => FunctionJson::WeightedProduct { wa: *wa, wb: *wb },
        TradingFunction::ConstantSum { rate } => FunctionJson::ConstantSum { rate: *rate },
        TradingFunction::Lmsr => FunctionJson::Lmsr,
        TradingFunction::Monomial { exponents } => FunctionJson::Monomial { exponents: exponents.clone() },
        TradingFunction::Hspec { coeffs } => FunctionJson::Hspec { coeffs: coeffs.clone() },
        TradingFunction::DensityPair(p) => FunctionJson::DensityPair { forward: half_to_json(&p.forward)?, reverse: half_to_json(&p.reverse)? },
        TradingFunction::Custom(c) => FunctionJson::Custom { expr: c.name().to_string() },
        TradingFunction::Fee(_) => return Err(IoError::Unencodable("fee-wrapped functions; set the CFMM fee instead".into())),
    })
}

struct Symbols<'a>(&'a [String]);

impl Symbols<'_> {
    fn id(&self, s: &str) -> Result<AssetId, IoError> {
        self.0.iter().position(|a| a == s).map(AssetId).ok_or_else(|| IoError::UnknownAsset(s.to_string()))
    }

    fn name(&self, a: AssetId) -> String {
        self.0[a.0].clone()
    }
}

enum Entry {
    Participant(Participant),
    Ref(String),
}

fn entry_from_json(p: &ParticipantJson, sym: &Symbols<'_>) -> Result<Entry, IoError> {
    Ok(Entry::Participant(match p {
        ParticipantJson::LimitSell { sell, buy, amount, min_price } => {
            Participant::LimitSell(LimitSellOffer { sell: sym.id(sell)?, buy: sym.id(buy)?, amount: *amount, min_price: *min_price })
        }
        ParticipantJson::LimitBuy { sell, buy, endowment, target, max_price } => Participant::LimitBuy(LimitBuyOffer {
            sell: sym.id(sell)?,
            buy: sym.id(buy)?,
            endowment: *endowment,
            target: *target,
            max_price: *max_price,
        }),
        ParticipantJson::Cfmm { id, assets, reserves, function, fee } => Participant::Cfmm(CfmmDecl {
            id: id.clone(),
            assets: assets.iter().map(|a| sym.id(a)).collect::<Result<_, _>>()?,
            reserves: reserves.clone(),
            function: function_from_json(function, assets.len())?,
            fee: *fee,
        }),
        ParticipantJson::CfmmRef { id } => return Ok(Entry::Ref(id.clone())),
    }))
}

fn participant_to_json(p: &Participant, sym: &Symbols<'_>) -> Result<ParticipantJson, IoError> {
    Ok(match p {
        Participant::LimitSell(o) => ParticipantJson::LimitSell { sell: sym.name(o.sell), buy: sym.name(o.buy), amount: o.amount, min_price: o.min_price },
        Participant::LimitBuy(o) => ParticipantJson::LimitBuy {
            sell: sym.name(o.sell),
            buy: sym.name(o.buy),
            endowment: o.endowment,
            target: o.target,
            max_price: o.max_price,
        },
        Participant::Cfmm(c) => ParticipantJson::Cfmm {
            id: c.id.clone(),
            assets: c.assets.iter().map(|a| sym.name(*a)).collect(),
            reserves: c.reserves.clone(),
            function: function_to_json(&c.function)?,
            fee: c.fee,
        },
    })
}

fn options_from_json(o: &OptionsJson) -> InstanceOptions {
    InstanceOptions { tol: o.tol.unwrap_or(DEFAULT_TOL), max_iters: o.max_iters }
}

fn batch_from_json(raw: InstanceJson) -> Result<SequenceBatch, IoError> {
    let sym = Symbols(&raw.assets);
    let entries = raw
        .participants
        .iter()
        .map(|p| {
            entry_from_json(p, &sym).map(|e| match e {
                Entry::Participant(p) => SequenceEntry::Participant(p),
                Entry::Ref(id) => SequenceEntry::CfmmRef(id),
            })
        })
        .collect::<Result<_, _>>()?;
    let options = options_from_json(&raw.options);
    Ok(SequenceBatch { assets: raw.assets, entries, options })
}

pub fn parse_instance(text: &str) -> Result<BatchInstance, IoError> {
    let raw: InstanceJson = serde_json::from_str(text)?;
    let sym = Symbols(&raw.assets);
    let mut participants = Vec::with_capacity(raw.participants.len());
    for p in &raw.participants {
        match entry_from_json(p, &sym)? {
            Entry::Participant(p) => participants.push(p),
            Entry::Ref(id) => return Err(IoError::Invalid(format!("cfmm_ref {id} is only meaningful inside a sequence"))),
        }
    }
    Ok(BatchInstance { assets: raw.assets.clone(), participants, options: options_from_json(&raw.options) })
}

pub fn instance_to_json(inst: &BatchInstance) -> Result<Value, IoError> {
    let sym = Symbols(&inst.assets);
    let raw = InstanceJson {
        assets: inst.assets.clone(),
        participants: inst.participants.iter().map(|p| participant_to_json(p, &sym)).collect::<Result<_, _>>()?,
        options: OptionsJson { tol: Some(inst.options.tol), max_iters: inst.options.max_iters },
    };
    Ok(serde_json::to_value(raw)?)
}

/// A JSON array of batches, each shaped like an instance and allowed `cfmm_ref` entries.
pub fn parse_sequence(text: &str) -> Result<Vec<SequenceBatch>, IoError> {
    let raw: Vec<InstanceJson> = serde_json::from_str(text)?;
    raw.into_iter().map(batch_from_json).collect()
}

fn by_symbol(assets: &[String], values: impl IntoIterator<Item = Value>) -> Value {
    let mut m = Map::new();
    for (a, v) in assets.iter().zip(values) {
        m.insert(a.clone(), v);
    }
    Value::Object(m)
}

fn participant_label(p: &Participant) -> Value {
    match p {
        Participant::Cfmm(c) => Value::String(c.id.clone()),
        _ => Value::Null,
    }
}

pub fn solution_to_json(inst: &BatchInstance, sol: &BatchSolution, rational: Option<&RationalSolution>) -> Value {
    let trades: Vec<Value> = inst
        .participants
        .iter()
        .zip(&sol.trades)
        .enumerate()
        .map(|(i, (p, t))| {
            json!({
                "participant": i,
                "type": p.kind(),
                "id": participant_label(p),
                "delta": by_symbol(&inst.assets, t.iter().map(|v| json!(v))),
            })
        })
        .collect();
    let mut out = Map::new();
    out.insert("solver".into(), json!(sol.solver));
    out.insert("prices".into(), by_symbol(&inst.assets, sol.prices.values().iter().map(|v| json!(v))));
    out.insert("trades".into(), Value::Array(trades));
    out.insert("objective_value".into(), json!(sol.objective_value));
    out.insert("iterations".into(), json!(sol.iterations));
    out.insert("verifier_report".into(), serde_json::to_value(&sol.verifier_report).unwrap_or(Value::Null));
    if let Some(r) = rational {
        let trades: Vec<Value> = r.trades.iter().map(|t| by_symbol(&inst.assets, t.iter().map(rational_json))).collect();
        out.insert(
            "rational".into(),
            json!({
                "prices": by_symbol(&inst.assets, r.prices.iter().map(rational_json)),
                "trades": trades,
            }),
        );
    }
    Value::Object(out)
}

fn number(v: &Value, what: &str) -> Result<f64, IoError> {
    v.as_f64().ok_or_else(|| IoError::Invalid(format!("{what} is not a number")))
}

fn vector(inst: &BatchInstance, v: &Value, what: &str) -> Result<Vec<f64>, IoError> {
    let obj = v.as_object().ok_or_else(|| IoError::Invalid(format!("{what} is not an object")))?;
    if let Some(k) = obj.keys().find(|k| !inst.assets.contains(k)) {
        return Err(IoError::UnknownAsset(k.clone()));
    }
    inst.assets
        .iter()
        .map(|a| match obj.get(a) {
            Some(x) => number(x, &format!("{what}.{a}")),
            None => Ok(0.0),
        })
        .collect()
}

/// Reads a solution written by [`solution_to_json`] against the instance it solves.
pub fn parse_solution(inst: &BatchInstance, text: &str) -> Result<BatchSolution, IoError> {
    let v: Value = serde_json::from_str(text)?;
    let prices = vector(inst, v.get("prices").ok_or_else(|| IoError::Invalid("missing prices".into()))?, "prices")?;
    let prices = PriceVector::new(prices).map_err(|e| IoError::Invalid(e.to_string()))?;
    let raw = v.get("trades").and_then(Value::as_array).ok_or_else(|| IoError::Invalid("missing trades".into()))?;
    let mut trades = vec![vec![0.0; inst.n_assets()]; inst.participants.len()];
    for (k, t) in raw.iter().enumerate() {
        let i = match t.get("participant") {
            Some(x) => x.as_u64().ok_or_else(|| IoError::Invalid(format!("trade {k} has a bad participant index")))? as usize,
            None => k,
        };
        if i >= trades.len() {
            return Err(IoError::Invalid(format!("trade {k} names participant {i} of {}", trades.len())));
        }
        trades[i] = vector(inst, t.get("delta").ok_or_else(|| IoError::Invalid(format!("trade {k} has no delta")))?, "delta")?;
    }
    let verifier_report: Vec<CheckResult> = match v.get("verifier_report") {
        Some(r) if !r.is_null() => serde_json::from_value(r.clone())?,
        _ => Vec::new(),
    };
    Ok(BatchSolution {
        prices,
        trades,
        objective_value: v.get("objective_value").and_then(Value::as_f64),
        iterations: v.get("iterations").and_then(Value::as_u64).unwrap_or(0) as usize,
        solver: v.get("solver").and_then(Value::as_str).unwrap_or("").to_string(),
        verifier_report,
    })
}

/// Exact prices from the `rational` block of a solution, when present.
pub fn parse_rational_prices(inst: &BatchInstance, v: &Value) -> Option<Vec<num_rational::BigRational>> {
    let prices = v.get("rational")?.get("prices")?;
    inst.assets.iter().map(|a| rational_from_json(prices.get(a)?)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::*;

    const LMSR: &str = r#"{"assets":["A","B"],"participants":[
        {"type":"limit_sell","sell":"A","buy":"B","amount":100,"min_price":0.5},
        {"type":"cfmm","id":"m1","assets":["A","B"],"reserves":[1,1],"function":{"kind":"lmsr"},"fee":0}],
        "options":{}}"#;

    #[test]
    fn parses_documented_shape() {
        let inst = parse_instance(LMSR).unwrap();
        assert_eq!(inst.assets, vec!["A", "B"]);
        assert_eq!(inst.participants.len(), 2);
        assert_eq!(inst.options.tol, DEFAULT_TOL);
        assert!(matches!(&inst.participants[1], Participant::Cfmm(c) if matches!(c.function, TradingFunction::Lmsr)));
    }

    #[test]
    fn unknown_asset_rejected() {
        let text = r#"{"assets":["A","B"],"participants":[{"type":"limit_sell","sell":"A","buy":"C","amount":1,"min_price":1}]}"#;
        assert!(matches!(parse_instance(text), Err(IoError::UnknownAsset(s)) if s == "C"));
    }

    #[test]
    fn instance_round_trip() {
        let inst = degenerate_instance();
        let text = instance_to_json(&inst).unwrap().to_string();
        let back = parse_instance(&text).unwrap();
        assert_eq!(instance_to_json(&back).unwrap(), instance_to_json(&inst).unwrap());
    }

    #[test]
    fn density_and_custom_kinds_parse() {
        let text = r#"{"assets":["A","B"],"participants":[
            {"type":"cfmm","id":"d","assets":["A","B"],"reserves":[5,5],"function":{"kind":"density_pair",
              "forward":{"shape":"jumps","jumps":[[2,1],[3,1]]},"reverse":{"shape":"hyperbolic","alpha":4,"beta":1}}},
            {"type":"cfmm","id":"c","assets":["A","B"],"reserves":[1,1],"function":{"kind":"custom","expr":"x*y"}}]}"#;
        let inst = parse_instance(text).unwrap();
        let back = parse_instance(&instance_to_json(&inst).unwrap().to_string()).unwrap();
        assert_eq!(back.participants.len(), 2);
    }

    #[test]
    fn cfmm_ref_only_in_sequences() {
        let text = r#"{"assets":["A","B"],"participants":[{"type":"cfmm_ref","id":"m1"}]}"#;
        assert!(parse_instance(text).is_err());
        let seq = parse_sequence(&format!("[{LMSR}, {text}]")).unwrap();
        assert!(matches!(seq[1].entries[0], SequenceEntry::CfmmRef(ref id) if id == "m1"));
    }

    #[test]
    fn solution_round_trip_is_exact() {
        let inst = lmsr_instance();
        let sol = crate::solve_convex(&inst, &Default::default()).unwrap();
        let text = solution_to_json(&inst, &sol, None).to_string();
        let back = parse_solution(&inst, &text).unwrap();
        assert_eq!(back.prices, sol.prices);
        assert_eq!(back.trades, sol.trades);
        assert_eq!(back.verifier_report, sol.verifier_report);
    }

    #[test]
    fn prices_keep_declaration_order() {
        let mut inst = lmsr_instance();
        inst.assets = vec!["Z".into(), "A".into()];
        let sol = crate::solve_convex(&inst, &Default::default()).unwrap();
        let v = solution_to_json(&inst, &sol, None);
        let keys: Vec<&String> = v["prices"].as_object().unwrap().keys().collect();
        assert_eq!(keys, vec!["Z", "A"]);
    }
}
