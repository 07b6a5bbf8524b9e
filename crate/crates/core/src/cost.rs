//! Token-based dollar accounting for single-model and routed calls.
//!
//! Amounts are exact integers in pico-dollars (1e-12 USD): per-token list
//! prices sit well below one micro-dollar, and integer accumulation keeps
//! per-1000 aggregates free of float drift. Conversion to dollars happens
//! only for display.

use std::fmt;
use std::ops::{Add, AddAssign};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::route::RoutingDecision;
use crate::{Error, Result};

const PICOS_PER_DOLLAR: f64 = 1e12;

/// Environment variable naming the default price-sheet file.
pub const PRICE_SHEET_ENV: &str = "ARBITRAGE_PRICE_SHEET";

/// An exact dollar amount in pico-dollars.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Cost(u128);

impl Cost {
    pub const ZERO: Cost = Cost(0);

    pub fn from_picos(picos: u128) -> Self {
        Self(picos)
    }

    pub fn picos(self) -> u128 {
        self.0
    }

    pub fn dollars(self) -> f64 {
        self.0 as f64 / PICOS_PER_DOLLAR
    }
}

impl Add for Cost {
    type Output = Cost;

    fn add(self, rhs: Cost) -> Cost {
        Cost(self.0 + rhs.0)
    }
}

impl AddAssign for Cost {
    fn add_assign(&mut self, rhs: Cost) {
        self.0 += rhs.0;
    }
}

impl std::iter::Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(iter: I) -> Cost {
        iter.fold(Cost::ZERO, Add::add)
    }
}

impl fmt::Display for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "${:.9}", self.dollars())
    }
}

/// Per-token price in pico-dollars.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Price(u64);

impl Price {
    pub fn from_picos(picos: u64) -> Self {
        Self(picos)
    }

    /// Rounds a dollars-per-token figure to the nearest pico-dollar.
    pub fn from_dollars(dollars: f64) -> Result<Self> {
        if !dollars.is_finite() || dollars < 0.0 {
            return Err(Error::invalid(format!(
                "price must be finite and non-negative, got {dollars}"
            )));
        }
        let picos = (dollars * PICOS_PER_DOLLAR).round();
        if picos > u64::MAX as f64 {
            return Err(Error::invalid(format!("price {dollars} is too large")));
        }
        Ok(Self(picos as u64))
    }

    pub fn picos(self) -> u64 {
        self.0
    }

    pub fn dollars(self) -> f64 {
        self.0 as f64 / PICOS_PER_DOLLAR
    }

    /// Price of `tokens` tokens.
    pub fn times(self, tokens: u64) -> Cost {
        Cost(u128::from(self.0) * u128::from(tokens))
    }

    pub fn scaled(self, factor: u64) -> Self {
        Self(self.0 * factor)
    }
}

impl Serialize for Price {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.dollars())
    }
}

impl<'de> Deserialize<'de> for Price {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let dollars = f64::deserialize(d)?;
        Price::from_dollars(dollars).map_err(serde::de::Error::custom)
    }
}

/// Token usage of one question.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primary_in: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primary_out: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guardian_in: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guardian_out: Option<u64>,
    /// Full prompt length, the base of the routed-prompt estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_in: Option<u64>,
}

impl TokenCounts {
    pub fn all(primary_in: u64, primary_out: u64, guardian_in: u64, guardian_out: u64, full_in: u64) -> Self {
        Self {
            primary_in: Some(primary_in),
            primary_out: Some(primary_out),
            guardian_in: Some(guardian_in),
            guardian_out: Some(guardian_out),
            full_in: Some(full_in),
        }
    }
}

fn need(v: Option<u64>, field: &'static str) -> Result<u64> {
    v.ok_or(Error::MissingTokens { field })
}

/// Dollars per token for both models.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceSheet {
    pub primary_in_price: Price,
    pub primary_out_price: Price,
    pub guardian_in_price: Price,
    pub guardian_out_price: Price,
}

impl PriceSheet {
    /// Parses the flat `key = value` price-sheet format.
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid(format!("price sheet: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        format!(
            "primary_in_price = {:e}\nprimary_out_price = {:e}\nguardian_in_price = {:e}\nguardian_out_price = {:e}\n",
            self.primary_in_price.dollars(),
            self.primary_out_price.dollars(),
            self.guardian_in_price.dollars(),
            self.guardian_out_price.dollars(),
        )
    }

    /// Every price multiplied by `factor`.
    pub fn scaled(&self, factor: u64) -> Self {
        Self {
            primary_in_price: self.primary_in_price.scaled(factor),
            primary_out_price: self.primary_out_price.scaled(factor),
            guardian_in_price: self.guardian_in_price.scaled(factor),
            guardian_out_price: self.guardian_out_price.scaled(factor),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Primary,
    Guardian,
}

/// `c_in * t_in + c_out * t_out` for one model.
pub fn single_cost(tokens: &TokenCounts, prices: &PriceSheet, model: Model) -> Result<Cost> {
    Ok(match model {
        Model::Primary => {
            prices.primary_in_price.times(need(tokens.primary_in, "primary_in")?)
                + prices.primary_out_price.times(need(tokens.primary_out, "primary_out")?)
        }
        Model::Guardian => {
            prices.guardian_in_price.times(need(tokens.guardian_in, "guardian_in")?)
                + prices.guardian_out_price.times(need(tokens.guardian_out, "guardian_out")?)
        }
    })
}

/// Prompt tokens charged when `menu` of `actions` options are sent on:
/// `floor(full_in * (0.5 + 0.5 * menu / actions))`, in exact integer arithmetic.
pub fn hybrid_input_tokens(full_in: u64, menu: usize, actions: usize) -> Result<u64> {
    if menu < 1 || menu > actions {
        return Err(Error::invalid(format!(
            "menu size {menu} must lie in 1..={actions}"
        )));
    }
    let num = u128::from(full_in) * (actions as u128 + menu as u128);
    let den = 2 * actions as u128;
    Ok((num / den) as u64)
}

/// Primary cost plus, for deferred decisions, the conservative Guardian
/// estimate: scaled prompt tokens and the full Guardian completion length.
pub fn routed_cost(tokens: &TokenCounts, prices: &PriceSheet, decision: &RoutingDecision) -> Result<Cost> {
    let mut total = single_cost(tokens, prices, Model::Primary)?;
    if decision.deferred {
        let full_in = need(tokens.full_in, "full_in")?;
        let prompt = hybrid_input_tokens(full_in, decision.menu_size, decision.action_count)?;
        let completion = need(tokens.guardian_out, "guardian_out")?;
        total += prices.guardian_in_price.times(prompt) + prices.guardian_out_price.times(completion);
    }
    Ok(total)
}
