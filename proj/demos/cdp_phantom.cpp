// Reconstructs a synthetic phantom from noisy coded-diffraction magnitudes
// with deepECpr and a TV denoiser, then compares against HIO.
#include "ecpr/ecpr.hpp"

#include <cstdio>

using namespace ecpr;

int main()
{
    const Image truth = make_phantom(PhantomSpec{64, 64, 1, 6, 0});
    const Rng root(0);
    Rng code_rng = root.split(0);
    Rng noise_rng = root.split(1);
    const CdpOperator op(truth.shape(), make_cdp_codes(code_rng, truth.shape().plane(), 4));
    const double alpha = 5.0;
    const RealVector y = simulate_measurements(noise_rng, op.forward(truth), NoiseModel{alpha});

    const Image x0 = cdp_init(y, op);
    const Image hio = hio_run(y, op, HioConfig{}, x0);

    DenoiserBank bank;
    bank.specs.push_back(tv_denoiser(TvParams{}));
    RunConfig cfg;
    const auto res = deepecpr_run(cfg, AmplitudeChannel(y, alpha_to_v(alpha)), op, bank, x0, &truth);

    const auto policy = AmbiguityPolicy::cdp();
    std::printf("HIO       PSNR %.2f dB\n", psnr(resolve_ambiguity(hio, truth, policy), truth));
    std::printf("deepECpr  PSNR %.2f dB after %zu denoiser calls\n",
                psnr(resolve_ambiguity(res.estimate, truth, policy), truth), res.denoiser_calls);
    write_pnm("cdp_truth.pgm", truth);
    write_pnm("cdp_hio.pgm", hio);
    write_pnm("cdp_deepecpr.pgm", res.estimate);
    return 0;
}
