//! Pluggable state scorers ("judges").
//!
//! A judge maps a full parameter state to a scalar where higher means safer.
//! The toy synthetic judge lives in [`crate::toy::judge`]; anything else
//! (a closure, a remote reward model wrapper) implements the same trait.

use std::collections::HashMap;
use std::sync::Mutex;

use crate::checkpoint::ParameterState;
use crate::error::Result;

pub trait Judge: Sync {
    fn score(&self, state: &ParameterState) -> Result<f64>;
}

impl<F> Judge for F
where
    F: Fn(&ParameterState) -> Result<f64> + Sync,
{
    fn score(&self, state: &ParameterState) -> Result<f64> {
        self(state)
    }
}

/// Memoizes judge calls by state digest.
pub struct CachedJudge<'a, J: Judge + ?Sized> {
    inner: &'a J,
    cache: Mutex<HashMap<String, f64>>,
}

impl<'a, J: Judge + ?Sized> CachedJudge<'a, J> {
    pub fn new(inner: &'a J) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn cached_len(&self) -> usize {
        self.cache.lock().unwrap().len()
    }
}

impl<J: Judge + ?Sized> Judge for CachedJudge<'_, J> {
    fn score(&self, state: &ParameterState) -> Result<f64> {
        let key = state.digest();
        if let Some(&v) = self.cache.lock().unwrap().get(&key) {
            return Ok(v);
        }
        let v = self.inner.score(state)?;
        self.cache.lock().unwrap().insert(key, v);
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::WeightMatrix;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn cache_hits_skip_inner_calls() {
        let calls = AtomicUsize::new(0);
        let judge = |s: &ParameterState| {
            calls.fetch_add(1, Ordering::SeqCst);
            Ok(s.get("w").unwrap().get(0, 0) as f64)
        };
        let cached = CachedJudge::new(&judge);
        let s = ParameterState::from_modules([(
            "w".into(),
            WeightMatrix::new(1, 1, vec![2.0]).unwrap(),
        )]);
        assert_eq!(cached.score(&s).unwrap(), 2.0);
        assert_eq!(cached.score(&s.clone()).unwrap(), 2.0);
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(cached.cached_len(), 1);
    }
}
