//! Human annotation budget, counted in items.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every human annotation costs exactly one unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetLedger {
    total: usize,
    used: usize,
}

impl BudgetLedger {
    pub fn new(total: usize) -> Self {
        BudgetLedger { total, used: 0 }
    }

    /// Budget for `fraction` of a dataset of `n` items: `floor(fraction * n)`.
    pub fn from_fraction(fraction: f64, n: usize) -> Self {
        Self::new((fraction * n as f64 + 1e-9).floor() as usize)
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn used(&self) -> usize {
        self.used
    }

    pub fn remaining(&self) -> usize {
        self.total - self.used
    }

    pub fn is_exhausted(&self) -> bool {
        self.used == self.total
    }

    pub fn charge(&mut self) -> Result<()> {
        if self.used >= self.total {
            return Err(Error::BudgetExhausted { total: self.total });
        }
        self.used += 1;
        Ok(())
    }

    /// Value-style charge: returns the charged ledger and leaves `self` untouched.
    pub fn charged(self) -> Result<Self> {
        let mut next = self;
        next.charge()?;
        Ok(next)
    }
}
