//! Bits-per-weight accounting for pruned, binary-code quantized matrices.

use serde::{Deserialize, Serialize};

use super::pruned_count;

/// Alpha-table overhead above this fraction of the total is flagged.
pub const ALPHA_OVERHEAD_WARN_FRACTION: f64 = 0.05;

/// Row pointer width used by [`csr_bits_estimate`].
pub const CSR_POINTER_BITS: usize = 32;

/// Layout and encoding parameters of one quantized matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageParams {
    pub rows: usize,
    pub cols: usize,
    pub bits: usize,
    pub tables_per_row: usize,
    pub prune_rate: f64,
    /// Cost of the pruning mask after whatever index compression is used.
    /// 1.0 is a raw bitmask.
    pub mask_bits_per_weight: f64,
    /// Width of each stored alpha; 0 leaves the tables out of the total.
    pub alpha_bits: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageReport {
    pub weight_bits_per_weight: f64,
    pub mask_bits_per_weight: f64,
    pub alpha_overhead_bits_per_weight: f64,
    pub total_bits_per_weight: f64,
    pub compression_vs_float32: f64,
    /// Size of all alpha tables.
    pub table_size_bytes: f64,
    /// Size of the bit planes alone (no tables, no mask).
    pub weight_payload_bytes: f64,
    /// Alpha tables take more than [`ALPHA_OVERHEAD_WARN_FRACTION`] of the total.
    pub alpha_overhead_flag: bool,
}

impl StorageReport {
    /// Compression ratio against another bits-per-weight budget, e.g. 2.0
    /// for ternary weights.
    pub fn compression_vs(&self, baseline_bits_per_weight: f64) -> f64 {
        baseline_bits_per_weight / self.total_bits_per_weight
    }

    pub fn table_size_kib(&self) -> f64 {
        self.table_size_bytes / 1024.0
    }

    pub fn weight_payload_kib(&self) -> f64 {
        self.weight_payload_bytes / 1024.0
    }

    /// Flat `key=value` lines.
    pub fn to_text(&self) -> String {
        format!(
            "weight_bits_per_weight={:.6}\nmask_bits_per_weight={:.6}\nalpha_overhead_bits_per_weight={:.6}\n\
             total_bits_per_weight={:.6}\ncompression_vs_float32={:.6}\ntable_size_bytes={:.1}\n\
             weight_payload_bytes={:.1}\nalpha_overhead_flag={}\n",
            self.weight_bits_per_weight,
            self.mask_bits_per_weight,
            self.alpha_overhead_bits_per_weight,
            self.total_bits_per_weight,
            self.compression_vs_float32,
            self.table_size_bytes,
            self.weight_payload_bytes,
            self.alpha_overhead_flag,
        )
    }
}

pub fn storage_report(p: &StorageParams) -> StorageReport {
    let n = (p.rows * p.cols) as f64;
    let weight = (1.0 - p.prune_rate) * p.bits as f64;
    let table_bits = (p.rows * p.tables_per_row * p.bits * p.alpha_bits) as f64;
    let alpha = if n > 0.0 { table_bits / n } else { 0.0 };
    let total = weight + p.mask_bits_per_weight + alpha;
    StorageReport {
        weight_bits_per_weight: weight,
        mask_bits_per_weight: p.mask_bits_per_weight,
        alpha_overhead_bits_per_weight: alpha,
        total_bits_per_weight: total,
        compression_vs_float32: 32.0 / total,
        table_size_bytes: table_bits / 8.0,
        weight_payload_bytes: weight * n / 8.0,
        alpha_overhead_flag: total > 0.0 && alpha > ALPHA_OVERHEAD_WARN_FRACTION * total,
    }
}

/// Bits per weight of a CSR encoding with the given index and value widths
/// and 32-bit row pointers.
pub fn csr_bits_estimate(rows: usize, cols: usize, prune_rate: f64, index_bits: usize, value_bits: usize) -> f64 {
    let n = rows * cols;
    if n == 0 {
        return 0.0;
    }
    let nnz = n - pruned_count(n, prune_rate);
    let bits = nnz * (index_bits + value_bits) + (rows + 1) * CSR_POINTER_BITS;
    bits as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(bits: usize, tables: usize) -> StorageParams {
        StorageParams {
            rows: 400,
            cols: 800,
            bits,
            tables_per_row: tables,
            prune_rate: 0.0,
            mask_bits_per_weight: 0.0,
            alpha_bits: 16,
        }
    }

    #[test]
    fn pruned_one_bit_budget() {
        let r = storage_report(&StorageParams {
            rows: 400,
            cols: 800,
            bits: 1,
            tables_per_row: 1,
            prune_rate: 0.8,
            mask_bits_per_weight: 0.1,
            alpha_bits: 0,
        });
        assert!((r.total_bits_per_weight - 0.3).abs() < 1e-12);
        assert!((r.compression_vs(2.0) - 6.6667).abs() < 1e-3);
        assert!((r.compression_vs_float32 - 106.6667).abs() < 1e-3);
        assert!(!r.alpha_overhead_flag);
    }

    #[test]
    fn components_sum_to_total() {
        let r = storage_report(&StorageParams {
            prune_rate: 0.3,
            mask_bits_per_weight: 0.4,
            ..params(3, 4)
        });
        let sum = r.weight_bits_per_weight + r.mask_bits_per_weight + r.alpha_overhead_bits_per_weight;
        assert!((sum - r.total_bits_per_weight).abs() < 1e-12);
    }

    #[test]
    fn small_model_table_sizes() {
        assert!((storage_report(&params(1, 1)).table_size_kib() - 0.78125).abs() < 1e-12);
        assert!((storage_report(&params(3, 8)).table_size_kib() - 18.75).abs() < 1e-12);
        assert!((storage_report(&params(1, 1)).weight_payload_kib() - 39.0625).abs() < 1e-12);
    }

    #[test]
    fn overhead_flag() {
        // 8 tables of 16-bit alphas over 10 columns dominate a 1-bit payload
        let r = storage_report(&StorageParams {
            rows: 4,
            cols: 10,
            ..params(1, 8)
        });
        assert!(r.alpha_overhead_flag);
    }

    #[test]
    fn csr_examples() {
        let bpw = csr_bits_estimate(200, 200, 0.8, 8, 1);
        assert!(bpw >= 1.8 && bpw > 0.3);
        let dense = csr_bits_estimate(10, 16, 0.0, 4, 1);
        assert!((dense - (5.0 + 11.0 * 32.0 / 160.0)).abs() < 1e-12);
        assert!((csr_bits_estimate(10, 16, 0.999, 4, 1) - 11.0 * 32.0 / 160.0).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn total_monotone_in_bits_and_mask(
            bits in 1usize..8,
            mask_bits in 0.0f64..2.0,
            rate in 0.0f64..0.95,
            tables in 1usize..8,
        ) {
            let base = StorageParams { prune_rate: rate, mask_bits_per_weight: mask_bits, ..params(bits, tables) };
            let a = storage_report(&base);
            let more_bits = storage_report(&StorageParams { bits: bits + 1, ..base });
            let more_mask = storage_report(&StorageParams { mask_bits_per_weight: mask_bits + 0.1, ..base });
            proptest::prop_assert!(more_bits.total_bits_per_weight >= a.total_bits_per_weight);
            proptest::prop_assert!(more_mask.total_bits_per_weight >= a.total_bits_per_weight);
        }
    }
}
