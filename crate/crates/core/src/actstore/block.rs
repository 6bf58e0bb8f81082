// SPDX-License-Identifier: MIT OR Apache-2.0

/// In-memory activation events for one layer: for every token position, the
/// ascending list of neurons that fired there (and optionally their values).
///
/// Stored in compressed-row form, one row per global token position.
#[derive(Debug, Clone, PartialEq)]
pub struct EventBlock {
    layer: usize,
    offsets: Vec<usize>,
    neurons: Vec<u32>,
    values: Option<Vec<f32>>,
}

impl EventBlock {
    pub fn new(layer: usize) -> Self {
        Self {
            layer,
            offsets: vec![0],
            neurons: Vec::new(),
            values: None,
        }
    }

    /// A block that carries activation values next to neuron ids.
    pub fn with_values(layer: usize) -> Self {
        Self {
            values: Some(Vec::new()),
            ..Self::new(layer)
        }
    }

    /// Block with `len` positions and no events.
    pub fn empty(layer: usize, len: usize) -> Self {
        Self {
            layer,
            offsets: vec![0; len + 1],
            neurons: Vec::new(),
            values: None,
        }
    }

    /// Builds a block from per-position neuron lists.
    pub fn from_positions<I, P>(layer: usize, positions: I) -> Self
    where
        I: IntoIterator<Item = P>,
        P: AsRef<[u32]>,
    {
        let mut block = Self::new(layer);
        for p in positions {
            block.push(p.as_ref());
        }
        block
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn has_values(&self) -> bool {
        self.values.is_some()
    }

    /// Number of token positions.
    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total number of (position, neuron) events.
    pub fn event_count(&self) -> usize {
        self.neurons.len()
    }

    pub fn push(&mut self, neurons: &[u32]) {
        assert!(self.values.is_none(), "block stores values; use push_with_values");
        self.neurons.extend_from_slice(neurons);
        self.offsets.push(self.neurons.len());
    }

    pub fn push_with_values(&mut self, neurons: &[u32], values: &[f32]) {
        assert_eq!(neurons.len(), values.len(), "one value per neuron");
        self.values
            .as_mut()
            .expect("block has no values; use push")
            .extend_from_slice(values);
        self.neurons.extend_from_slice(neurons);
        self.offsets.push(self.neurons.len());
    }

    pub fn position(&self, pos: usize) -> &[u32] {
        &self.neurons[self.offsets[pos]..self.offsets[pos + 1]]
    }

    pub fn values_at(&self, pos: usize) -> Option<&[f32]> {
        self.values
            .as_ref()
            .map(|v| &v[self.offsets[pos]..self.offsets[pos + 1]])
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u32]> + '_ {
        (0..self.len()).map(move |p| self.position(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csr_layout() {
        let b = EventBlock::from_positions(0, [vec![], vec![5], vec![5, 7]]);
        assert_eq!(b.len(), 3);
        assert_eq!(b.event_count(), 3);
        assert_eq!(b.position(0), &[] as &[u32]);
        assert_eq!(b.position(2), &[5, 7]);
        assert_eq!(EventBlock::empty(1, 4).len(), 4);
    }
}
