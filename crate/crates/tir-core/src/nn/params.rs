use serde::{Deserialize, Serialize};

/// Half-open index range into the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamRange {
    pub start: usize,
    pub len: usize,
}

impl ParamRange {
    pub fn slice<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.start..self.start + self.len]
    }

    pub fn slice_mut<'a>(&self, params: &'a mut [f64]) -> &'a mut [f64] {
        &mut params[self.start..self.start + self.len]
    }
}

/// Allocates consecutive parameter ranges while a model is being laid out.
#[derive(Debug, Default)]
pub struct LayoutBuilder {
    len: usize,
}

impl LayoutBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc(&mut self, n: usize) -> ParamRange {
        let r = ParamRange { start: self.len, len: n };
        self.len += n;
        r
    }

    pub fn total(&self) -> usize {
        self.len
    }
}
