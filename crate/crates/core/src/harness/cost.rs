//! Labeling/generation budget model: total cost is the sum over units of
//! `n_gen·c_gen + n_val·c_val + n_exec·c_exec`, compared against a budget.
//!
//! Amounts are exact decimals so the worked examples evaluate exactly.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::str::FromStr;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitCosts {
    pub c_gen: Decimal,
    pub c_val: Decimal,
    pub c_exec: Decimal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostUnit {
    pub modality: String,
    pub unit_id: String,
    pub n_gen: u64,
    pub n_val: u64,
    pub n_exec: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostSheet {
    pub budget: Decimal,
    pub costs: BTreeMap<String, UnitCosts>,
    pub units: Vec<CostUnit>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostProjection {
    pub total: Decimal,
    pub budget: Decimal,
    pub within_budget: bool,
    pub per_modality: BTreeMap<String, Decimal>,
}

impl CostSheet {
    pub fn validate(&self) -> Result<()> {
        if self.budget.is_sign_negative() && !self.budget.is_zero() {
            return Err(Error::invalid("budget is negative"));
        }
        for (m, c) in &self.costs {
            for (name, v) in [("c_gen", c.c_gen), ("c_val", c.c_val), ("c_exec", c.c_exec)] {
                if v.is_sign_negative() && !v.is_zero() {
                    return Err(Error::invalid(format!("{m}: {name} is negative")));
                }
            }
        }
        for u in &self.units {
            if !self.costs.contains_key(&u.modality) {
                return Err(Error::invalid(format!(
                    "unit {} has no costs for modality {}",
                    u.unit_id, u.modality
                )));
            }
        }
        Ok(())
    }

    /// Every count multiplied by `factor`.
    pub fn scaled_counts(&self, factor: u64) -> Self {
        let mut out = self.clone();
        for u in &mut out.units {
            u.n_gen *= factor;
            u.n_val *= factor;
            u.n_exec *= factor;
        }
        out
    }
}

fn overflow() -> Error {
    Error::invalid("cost total overflows")
}

pub fn project_cost(sheet: &CostSheet) -> Result<CostProjection> {
    sheet.validate()?;
    let mut per_modality: BTreeMap<String, Decimal> = BTreeMap::new();
    let mut total = Decimal::ZERO;
    for u in &sheet.units {
        let c = &sheet.costs[&u.modality];
        let mut unit = Decimal::ZERO;
        for (n, cost) in [(u.n_gen, c.c_gen), (u.n_val, c.c_val), (u.n_exec, c.c_exec)] {
            let term = Decimal::from(n).checked_mul(cost).ok_or_else(overflow)?;
            unit = unit.checked_add(term).ok_or_else(overflow)?;
        }
        let slot = per_modality.entry(u.modality.clone()).or_default();
        *slot = slot.checked_add(unit).ok_or_else(overflow)?;
        total = total.checked_add(unit).ok_or_else(overflow)?;
    }
    Ok(CostProjection {
        total: total.normalize(),
        budget: sheet.budget,
        within_budget: total <= sheet.budget,
        per_modality: per_modality.into_iter().map(|(k, v)| (k, v.normalize())).collect(),
    })
}

pub const COST_HEADER: [&str; 8] = [
    "modality", "unit_id", "n_gen", "n_val", "n_exec", "c_gen", "c_val", "c_exec",
];

fn parse_decimal(field: &str, s: &str) -> Result<Decimal> {
    Decimal::from_str(s.trim())
        .or_else(|_| Decimal::from_scientific(s.trim()))
        .map_err(|e| Error::Format(format!("{field}: `{s}`: {e}")))
}

fn parse_count(field: &str, s: &str) -> Result<u64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("{field}: `{s}` is not a nonnegative count")))
}

/// Reads the text sheet format:
///
/// ```text
/// # free-form comment lines
/// budget,1000
/// modality,unit_id,n_gen,n_val,n_exec,c_gen,c_val,c_exec
/// sql,u1,1000,1000,100,0.00008,0.00002,0.0004
/// ```
///
/// Costs repeat on every row and must agree within a modality.
pub fn read_cost_sheet(reader: impl Read) -> Result<CostSheet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let first = records.next().ok_or_else(|| Error::Format("empty cost sheet".into()))??;
    if first.len() != 2 || &first[0] != "budget" {
        return Err(Error::Format("first row must be `budget,<amount>`".into()));
    }
    let budget = parse_decimal("budget", &first[1])?;
    let header = records
        .next()
        .ok_or_else(|| Error::Format("missing header row".into()))??;
    if header.iter().collect::<Vec<_>>() != COST_HEADER {
        return Err(Error::Format(format!(
            "header must be `{}`",
            COST_HEADER.join(",")
        )));
    }
    let mut costs: BTreeMap<String, UnitCosts> = BTreeMap::new();
    let mut units = Vec::new();
    for rec in records {
        let rec = rec?;
        if rec.len() != COST_HEADER.len() {
            return Err(Error::Format(format!("row has {} fields", rec.len())));
        }
        let unit = CostUnit {
            modality: rec[0].to_string(),
            unit_id: rec[1].to_string(),
            n_gen: parse_count("n_gen", &rec[2])?,
            n_val: parse_count("n_val", &rec[3])?,
            n_exec: parse_count("n_exec", &rec[4])?,
        };
        let c = UnitCosts {
            c_gen: parse_decimal("c_gen", &rec[5])?,
            c_val: parse_decimal("c_val", &rec[6])?,
            c_exec: parse_decimal("c_exec", &rec[7])?,
        };
        match costs.get(&unit.modality) {
            Some(prev) if *prev != c => {
                return Err(Error::Format(format!(
                    "conflicting unit costs for modality {}",
                    unit.modality
                )))
            }
            Some(_) => {}
            None => {
                costs.insert(unit.modality.clone(), c);
            }
        }
        units.push(unit);
    }
    let sheet = CostSheet {
        budget,
        costs,
        units,
    };
    sheet.validate()?;
    Ok(sheet)
}

pub fn write_cost_sheet(sheet: &CostSheet, mut writer: impl Write) -> Result<()> {
    writeln!(writer, "# cost sheet")?;
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
    w.write_record(["budget", &sheet.budget.to_string()])?;
    w.write_record(COST_HEADER)?;
    for u in &sheet.units {
        let c = &sheet.costs[&u.modality];
        w.write_record([
            u.modality.clone(),
            u.unit_id.clone(),
            u.n_gen.to_string(),
            u.n_val.to_string(),
            u.n_exec.to_string(),
            c.c_gen.to_string(),
            c.c_val.to_string(),
            c.c_exec.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
