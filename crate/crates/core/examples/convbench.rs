use sarbbr::nn::{conv2d_backward, conv2d_forward, Tensor3};
use std::time::Instant;

fn main() {
    // Stage-1-like load: 2->6 and 6->6 channels at 128x128.
    for (ci, co, h, w) in [(2, 6, 128, 128), (6, 6, 128, 128), (6, 10, 64, 64), (10, 10, 64, 64)] {
        let input = Tensor3::from_vec(ci, h, w, (0..ci * h * w).map(|i| (i % 13) as f64 * 0.1).collect());
        let kernel: Vec<f64> = (0..co * ci * 9).map(|i| (i % 7) as f64 * 0.01).collect();
        let bias = vec![0.0; co];
        let reps = 60;
        let t0 = Instant::now();
        let mut sink = 0.0;
        for _ in 0..reps {
            let out = conv2d_forward(&input, &kernel, co, 3, &bias, 1, 1).unwrap();
            sink += out.data[0];
        }
        let dt_f = t0.elapsed().as_secs_f64();
        let flops_f = (2 * co * ci * 9 * h * w * reps) as f64;
        let out = conv2d_forward(&input, &kernel, co, 3, &bias, 1, 1).unwrap();
        let t1 = Instant::now();
        for _ in 0..reps {
            let g = conv2d_backward(&input, &kernel, co, 3, 1, 1, &out).unwrap();
            sink += g.dkernel[0];
        }
        let dt_b = t1.elapsed().as_secs_f64();
        let flops_b = (2 * 2 * co * ci * 9 * h * w * reps) as f64;
        println!(
            "conv {ci}->{co} @{h}x{w}: fwd {:.2} GFLOP/s, bwd {:.2} GFLOP/s (sink {sink:.1})",
            flops_f / dt_f / 1e9,
            flops_b / dt_b / 1e9
        );
    }
}
