// Micro-timings of the expensive kernels.
use bb84_latency::transforms::halfplane::{half_plane_expectation, Coherence, ContourEngine, GeomLinkMgf};
use bb84_latency::transforms::{LinkKernel, HalfPlaneEngine, ShiftedExp};
use num_complex::Complex64;
use std::time::Instant;

fn main() {
    let gen = ShiftedExp::new(2.0, 0.5).unwrap();
    let com = ShiftedExp::new(2.0, 0.5).unwrap();

    let t0 = Instant::now();
    let link = GeomLinkMgf::new(gen, com, 0.5).unwrap();
    println!("link b_h={} ({:?})", link.b_h, t0.elapsed());

    let t0 = Instant::now();
    let s = ContourEngine { link: &link }
        .s_expectation(0.0, Complex64::default())
        .unwrap();
    println!("contour S(0,0)={s} ({:?})", t0.elapsed());

    let t0 = Instant::now();
    let s = ContourEngine { link: &link }
        .s_expectation(2.0, Complex64::new(0.05, 0.0))
        .unwrap();
    println!("contour S(2,0.05)={s} ({:?})", t0.elapsed());

    let t0 = Instant::now();
    let j = ContourEngine { link: &link }.s_jet(0.0, 14).unwrap();
    println!("contour jet S(0,·) c0={} c1={} ({:?})", j.coeff(0), j.coeff(1), t0.elapsed());

    for (eta, t) in [(0.0, 0.0), (2.0, 0.0), (2.000025, 0.0), (0.000025, 0.0)] {
        let t0 = Instant::now();
        let v = half_plane_expectation(eta, Complex64::new(t, 0.0), gen, com, 0.5, 128).unwrap();
        println!(
            "double-sum S({eta},{t}) = {} terms={} rem={:.2e} ({:?})",
            v.value, v.terms, v.remainder, t0.elapsed()
        );
    }

    let t0 = Instant::now();
    let k = LinkKernel::new(gen, com, 0.5, HalfPlaneEngine::Auto, 128).unwrap();
    let i0 = k.i_of(Complex64::default(), Coherence::Infinite).unwrap();
    println!("I(0,inf)={i0} ({:?})", t0.elapsed());
    let t0 = Instant::now();
    let itc = k.i_of(Complex64::default(), Coherence::Finite(4.0e4)).unwrap();
    println!("I(0,tc)={itc} ({:?})", t0.elapsed());
    let t0 = Instant::now();
    let jet = k.i_jet(Coherence::Infinite, 14).unwrap();
    println!("i_jet c0={} c1={} ({:?})", jet.coeff(0), jet.coeff(1), t0.elapsed());
}
