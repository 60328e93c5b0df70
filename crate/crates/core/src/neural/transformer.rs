//! Post-norm transformer encoder over a sequence of observation vectors.

use crate::numerics::{Mat, SimRng};

use super::attention::MultiHeadCache;
use super::{
    dropout_backward, dropout_with_mask, positional_encoding_matrix, Dense, FeedForward, FeedForwardCache, LayerNorm,
    LayerNormCache, MultiHeadAttention, Param, Parameterized,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformerShape {
    pub inputs: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_hidden: usize,
    pub dropout: f64,
}

/// Self-attention and feed-forward sublayers, each wrapped in
/// dropout, residual add and layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlock {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
}

#[derive(Debug, Clone)]
struct BlockCache {
    attention: MultiHeadCache,
    attention_mask: Option<Mat>,
    norm1: LayerNormCache,
    ffn: FeedForwardCache,
    ffn_mask: Option<Mat>,
    norm2: LayerNormCache,
}

impl EncoderBlock {
    fn new(shape: &TransformerShape, rng: &mut SimRng) -> EncoderBlock {
        EncoderBlock {
            attention: MultiHeadAttention::new(shape.model_dim, shape.heads, rng),
            norm1: LayerNorm::new(shape.model_dim),
            ffn: FeedForward::new(shape.model_dim, shape.ffn_hidden, rng),
            norm2: LayerNorm::new(shape.model_dim),
        }
    }

    fn forward(&self, x: &Mat, rate: f64, training: bool, rng: &mut SimRng) -> (Mat, BlockCache) {
        let (a, attention) = self.attention.forward(x, x);
        let (a, attention_mask) = dropout_with_mask(&a, rate, training, rng);
        let (h1, norm1) = self.norm1.forward(&x.add(&a));
        let (f, ffn) = self.ffn.forward(&h1);
        let (f, ffn_mask) = dropout_with_mask(&f, rate, training, rng);
        let (h2, norm2) = self.norm2.forward(&h1.add(&f));
        (h2, BlockCache { attention, attention_mask, norm1, ffn, ffn_mask, norm2 })
    }

    fn backward(&mut self, cache: &BlockCache, grad: &Mat) -> Mat {
        let d_sum2 = self.norm2.backward(&cache.norm2, grad);
        let d_f = dropout_backward(&d_sum2, &cache.ffn_mask);
        let d_h1 = d_sum2.add(&self.ffn.backward(&cache.ffn, &d_f));
        let d_sum1 = self.norm1.backward(&cache.norm1, &d_h1);
        let d_a = dropout_backward(&d_sum1, &cache.attention_mask);
        let (dq, dkv) = self.attention.backward(&cache.attention, &d_a);
        d_sum1.add(&dq).add(&dkv)
    }
}

/// Input embedding plus positional features, a stack of encoder blocks and
/// a linear read-out back to the input dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerNet {
    pub embed: Dense,
    pub blocks: Vec<EncoderBlock>,
    pub head: Dense,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct TransformerCache {
    input: Mat,
    embed_mask: Option<Mat>,
    blocks: Vec<BlockCache>,
    last: Mat,
}

impl TransformerCache {
    /// Attention weights of `head` in `block`.
    pub fn attention_weights(&self, block: usize, head: usize) -> &Mat {
        self.blocks[block].attention.weights(head)
    }
}

impl TransformerNet {
    pub fn new(shape: TransformerShape, rng: &mut SimRng) -> TransformerNet {
        assert!((0.0..1.0).contains(&shape.dropout), "dropout rate must lie in [0, 1)");
        let embed = Dense::new(shape.inputs, shape.model_dim, rng);
        let blocks = (0..shape.layers).map(|_| EncoderBlock::new(&shape, rng)).collect();
        let head = Dense::new(shape.model_dim, shape.inputs, rng);
        TransformerNet { embed, blocks, head, dropout: shape.dropout }
    }

    pub fn model_dim(&self) -> usize {
        self.embed.outputs()
    }

    /// Maps an `inputs × n` sequence to an `inputs × n` sequence.
    pub fn forward(&self, x: &Mat, training: bool, rng: &mut SimRng) -> (Mat, TransformerCache) {
        let e = self.embed.forward(x).add(&positional_encoding_matrix(self.model_dim(), x.cols()));
        let (mut h, embed_mask) = dropout_with_mask(&e, self.dropout, training, rng);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, c) = b.forward(&h, self.dropout, training, rng);
            blocks.push(c);
            h = next;
        }
        let y = self.head.forward(&h);
        (y, TransformerCache { input: x.clone(), embed_mask, blocks, last: h })
    }

    pub fn backward(&mut self, cache: &TransformerCache, grad: &Mat) -> Mat {
        let mut d = self.head.backward(&cache.last, grad);
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            d = b.backward(c, &d);
        }
        let d = dropout_backward(&d, &cache.embed_mask);
        self.embed.backward(&cache.input, &d)
    }
}

impl Parameterized for TransformerNet {
    fn params(&self) -> Vec<(String, &Param)> {
        let mut v = self.embed.named("embed");
        for (i, b) in self.blocks.iter().enumerate() {
            v.extend(b.attention.named(&format!("block.{i}.attention")));
            v.extend(b.norm1.named(&format!("block.{i}.norm1")));
            v.extend(b.ffn.named(&format!("block.{i}.ffn")));
            v.extend(b.norm2.named(&format!("block.{i}.norm2")));
        }
        v.extend(self.head.named("head"));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.embed.all_mut();
        for b in &mut self.blocks {
            v.extend(b.attention.all_mut());
            v.push(&mut b.norm1.gain);
            v.push(&mut b.norm1.shift);
            v.extend(b.ffn.all_mut());
            v.push(&mut b.norm2.gain);
            v.push(&mut b.norm2.shift);
        }
        v.extend(self.head.all_mut());
        v
    }
}
