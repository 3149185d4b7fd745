//! Per-instance serving cost, broken down by pipeline component.
//!
//! Each pass feeds every instance through the model sequentially on the
//! calling thread. Component times are summed per pass and divided by the
//! instance count; the reported figure per component is the median over
//! passes. `overhead` is whatever a pass spent outside the timed components
//! (densification, loop and clock bookkeeping), also as a median, so
//! `Σ components + overhead` tracks `total` up to the spread between medians.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::metastack::{Result, StackError, SuperConeModel};
use crate::neural::combine;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub component: String,
    pub us_per_instance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub instances: usize,
    pub repeat: usize,
    /// Timed components in pipeline order.
    pub components: Vec<CostRow>,
    pub overhead_us: f64,
    pub total_us: f64,
}

impl CostReport {
    pub fn component_sum(&self) -> f64 {
        self.components.iter().map(|c| c.us_per_instance).sum()
    }

    /// `|Σ components + overhead - total| / total`.
    pub fn accounting_gap(&self) -> f64 {
        (self.component_sum() + self.overhead_us - self.total_us).abs() / self.total_us
    }

    /// `component,us_per_instance` rows, then `overhead` and `total`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("component,us_per_instance\n");
        for c in &self.components {
            out.push_str(&format!("{},{:.4}\n", c.component, c.us_per_instance));
        }
        out.push_str(&format!("overhead,{:.4}\n", self.overhead_us));
        out.push_str(&format!("total,{:.4}\n", self.total_us));
        out
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// One timed pass: per-component and total seconds summed over instances.
fn pass(model: &SuperConeModel, data: &Dataset) -> Result<(Vec<f64>, f64)> {
    let levels = model.stacks.len();
    let c = model.num_classes();
    // level 1..K, complementary, comb, combine
    let mut spent = vec![0.0; levels + 3];
    let mut total = 0.0;
    let mut sink = 0.0;
    for inst in data.instances() {
        let start = Instant::now();
        let x = model.densify(&inst.concepts)?;
        let mut row = x.clone();
        for level in 1..=levels {
            let t = Instant::now();
            model.run_level(level, &mut row)?;
            spent[level - 1] += t.elapsed().as_secs_f64();
        }
        let t = Instant::now();
        let h = model.meta.forward_complementary(&x)?;
        spent[levels] += t.elapsed().as_secs_f64();
        let t = Instant::now();
        let w = model.meta.forward_comb(&x)?;
        spent[levels + 1] += t.elapsed().as_secs_f64();
        let t = Instant::now();
        let blocks: Vec<&[f64]> = row[model.vocab_size..].chunks_exact(c).collect();
        let out = combine(w.as_slice(), h.as_slice(), &blocks);
        spent[levels + 2] += t.elapsed().as_secs_f64();
        sink += out[0];
        total += start.elapsed().as_secs_f64();
    }
    std::hint::black_box(sink);
    Ok((spent, total))
}

/// Median per-instance cost over `repeat` sequential passes.
pub fn bench_cost(model: &SuperConeModel, data: &Dataset, repeat: usize) -> Result<CostReport> {
    if data.is_empty() {
        return Err(StackError::Empty);
    }
    if repeat == 0 {
        return Err(StackError::Config("repeat must be at least 1".into()));
    }
    model.check_dataset(data)?;
    let n = data.len() as f64;
    let to_us = |s: f64| s * 1e6 / n;
    let levels = model.stacks.len();
    let mut per_component: Vec<Vec<f64>> = vec![Vec::with_capacity(repeat); levels + 3];
    let mut totals = Vec::with_capacity(repeat);
    let mut overheads = Vec::with_capacity(repeat);
    for _ in 0..repeat {
        let (spent, total) = pass(model, data)?;
        overheads.push(to_us(total - spent.iter().sum::<f64>()));
        totals.push(to_us(total));
        for (acc, s) in per_component.iter_mut().zip(spent) {
            acc.push(to_us(s));
        }
    }
    let names = (1..=levels)
        .map(|k| format!("experts_level_{k}"))
        .chain(["complementary", "comb", "combine"].map(String::from));
    Ok(CostReport {
        instances: data.len(),
        repeat,
        components: names
            .zip(per_component.iter_mut())
            .map(|(component, v)| CostRow {
                component,
                us_per_instance: median(v),
            })
            .collect(),
        overhead_us: median(&mut overheads),
        total_us: median(&mut totals),
    })
}
