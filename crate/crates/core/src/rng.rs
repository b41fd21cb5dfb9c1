//! Counter-based random substreams.
//!
//! Every (path, stock) pair owns a ChaCha stream keyed by the master seed, so
//! a path's draws never depend on which worker produced it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Bits of the stream id reserved for the stock index.
pub const STOCK_BITS: u32 = 20;
pub const MAX_STOCKS: usize = 1 << STOCK_BITS;
pub const MAX_PATHS: u64 = 1 << (64 - STOCK_BITS);

pub fn substream(master_seed: u64, path: u64, stock: usize) -> StreamRng {
    debug_assert!(stock < MAX_STOCKS && path < MAX_PATHS);
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream((path << STOCK_BITS) | stock as u64);
    rng
}
