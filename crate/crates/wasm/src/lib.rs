//! Browser bindings for three pieces of the detector: top-k entity pair
//! selection, distance-aware signed attention, and the one-tailed Welch
//! test. Inputs are plain text so the page can feed textareas straight in;
//! outputs are JSON strings.
//!
//! The `*_json` functions hold the logic and run natively; the exported
//! wrappers only convert errors to `JsValue`.

use kdcn::analysis::{welch_one_tailed, Direction};
use kdcn::knowledge::{attend, select_pairs, Member, PairSelection};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// One vector per non-empty line, numbers separated by commas or spaces.
pub fn parse_rows(text: &str) -> Result<Vec<Vec<f64>>, String> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_numbers(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect::<Result<_, _>>()?;
    if let Some(first) = rows.first() {
        if let Some(bad) = rows.iter().position(|r| r.len() != first.len()) {
            return Err(format!("row {} has {} values, expected {}", bad + 1, rows[bad].len(), first.len()));
        }
    }
    Ok(rows)
}

pub fn parse_numbers(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("not a number: {t:?}")))
        .collect()
}

#[derive(Serialize)]
struct PairView {
    a: String,
    b: String,
    distance: f64,
}

fn member(m: Member) -> String {
    match m {
        Member::Entity(i) => format!("e{}", i + 1),
        Member::Pseudo(j) => format!("pseudo{}", j + 1),
    }
}

fn pair_views(sel: &PairSelection) -> Vec<PairView> {
    sel.provenance
        .iter()
        .zip(&sel.distances)
        .map(|(&(a, b), &distance)| PairView {
            a: member(a),
            b: member(b),
            distance,
        })
        .collect()
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data")
}

pub fn select_pairs_json(entities: &str, k: usize, seed: u32) -> Result<String, String> {
    let rows = parse_rows(entities)?;
    let sel = select_pairs(&rows, k, u64::from(seed)).map_err(|e| e.to_string())?;
    Ok(to_json(&serde_json::json!({
        "pairs": pair_views(&sel),
        "pseudo_added": sel.pseudo_added,
        "candidates": sel.candidates,
        "distance_sum": sel.distance_sum(),
    })))
}

/// Attention of `query` over the selected pairs. An empty query means all
/// ones; otherwise it must have twice the entity width.
pub fn signed_attention_json(entities: &str, query: &str, k: usize, seed: u32) -> Result<String, String> {
    let rows = parse_rows(entities)?;
    let sel = select_pairs(&rows, k, u64::from(seed)).map_err(|e| e.to_string())?;
    let width = sel.pairs.cols();
    let mut q = parse_numbers(query)?;
    if q.is_empty() {
        q = vec![1.0; width];
    }
    let out = attend(&q, &sel).map_err(|e| e.to_string())?;
    Ok(to_json(&serde_json::json!({
        "pairs": pair_views(&sel),
        "alpha_pos": out.alpha_pos,
        "alpha_neg": out.alpha_neg,
        "beta_pos": out.beta_pos,
        "beta_neg": out.beta_neg,
        "f_kg": out.f_kg,
    })))
}

pub fn welch_json(a: &str, b: &str, greater: bool) -> Result<String, String> {
    let direction = if greater { Direction::Greater } else { Direction::Less };
    let r = welch_one_tailed(&parse_numbers(a)?, &parse_numbers(b)?, direction).map_err(|e| e.to_string())?;
    Ok(to_json(&r))
}

#[wasm_bindgen(js_name = selectPairs)]
pub fn select_pairs_js(entities: &str, k: usize, seed: u32) -> Result<String, JsValue> {
    select_pairs_json(entities, k, seed).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = signedAttention)]
pub fn signed_attention_js(entities: &str, query: &str, k: usize, seed: u32) -> Result<String, JsValue> {
    signed_attention_json(entities, query, k, seed).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = welchTest)]
pub fn welch_js(a: &str, b: &str, greater: bool) -> Result<String, JsValue> {
    welch_json(a, b, greater).map_err(|e| JsValue::from_str(&e))
}
