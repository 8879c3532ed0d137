//! Deterministic named random substreams derived from one scenario seed.

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for substream `name` at `indices` (e.g. cell, frame).
pub fn substream(seed: u64, name: &str, indices: &[u64]) -> u64 {
    // FNV-1a over the name keeps substream names stable across builds.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut s = splitmix(seed ^ splitmix(h));
    for &i in indices {
        s = splitmix(s ^ splitmix(i.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    s
}
