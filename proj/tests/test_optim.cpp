#include <gtest/gtest.h>

#include <cmath>

#include <torch/torch.h>

// The optimizer comes from libtorch; this pins its update rule to the
// bias-corrected closed form with the training hyperparameters.
TEST(Adam, StepsMatchClosedFormUpdate) {
    const double lr = 1e-4, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    auto theta = torch::tensor({0.5, -1.25, 3.0, 0.0}, torch::kFloat64).requires_grad_();
    torch::optim::Adam opt({theta}, torch::optim::AdamOptions(lr).betas({b1, b2}).eps(eps));
    const std::vector<double> a{1.0, 2.0, -0.5, 4.0}, c{0.1, -0.3, 0.7, 1.1};

    std::vector<double> ref{0.5, -1.25, 3.0, 0.0}, m(4, 0.0), v(4, 0.0);
    for (int t = 1; t <= 5; ++t) {
        // loss = sum a_i (theta_i - c_i)^2 / 2 + theta_i^3 / 3
        opt.zero_grad();
        const auto at = torch::tensor(a, torch::kFloat64), ct = torch::tensor(c, torch::kFloat64);
        ((at * (theta - ct).pow(2)).sum() / 2.0 + theta.pow(3).sum() / 3.0).backward();
        opt.step();
        for (std::size_t i = 0; i < 4; ++i) {
            const double g = a[i] * (ref[i] - c[i]) + ref[i] * ref[i];
            m[i] = b1 * m[i] + (1 - b1) * g;
            v[i] = b2 * v[i] + (1 - b2) * g * g;
            const double mhat = m[i] / (1 - std::pow(b1, t)), vhat = v[i] / (1 - std::pow(b2, t));
            ref[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
        for (std::size_t i = 0; i < 4; ++i)
            ASSERT_NEAR(theta[static_cast<std::int64_t>(i)].item<double>(), ref[i], 1e-10) << "step " << t;
    }
}
