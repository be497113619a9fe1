mod common;

use common::criteria::density_fits;

#[test]
fn learned_density_matches_uniform_and_mixture_targets() {
    let fits = density_fits(7).unwrap();
    assert!(fits.uniform_nll <= 0.02, "uniform NLL {}", fits.uniform_nll);
    let gap = fits.mixture_nll - fits.mixture_entropy;
    assert!(gap <= 0.05, "mixture NLL {} vs entropy {}", fits.mixture_nll, fits.mixture_entropy);
}
