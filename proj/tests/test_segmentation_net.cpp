#include "doctest_torch.hpp"

#include <array>

#include "support.hpp"
#include "uada/errors.hpp"
#include "uada/losses.hpp"

using namespace uada;

namespace {

SegNet make_seg(std::uint64_t seed = 0, SegConfig cfg = {}) {
    torch::manual_seed(seed);
    return SegNet(cfg);
}

torch::Tensor grid2x2() { return torch::tensor({1.0f, 2.0f, 3.0f, 4.0f}).view({1, 2, 2}); }

}  // namespace

TEST_SUITE("segmentation_net") {

TEST_CASE("adapted_conv examples") {
    const auto x = grid2x2();
    const auto expect = torch::tensor({2.0f, 4.0f, 6.0f, 8.0f}).view({1, 2, 2});

    const auto pure = adapted_conv(x, torch::zeros({1, 1, 1, 1}), torch::full({1, 1, 1, 1}, 2.0f));
    CHECK(torch::equal(pure, expect));

    auto ident = torch::zeros({1, 1, 3, 3});
    ident[0][0][1][1] = 1.0f;
    CHECK(torch::equal(adapted_conv(x, ident, torch::ones({1, 1, 1, 1})), expect));

    // Zero adapter: bitwise the plain convolution.
    const auto xr = torch::randn({4, 9, 9});
    const auto f = torch::randn({6, 4, 3, 3});
    const auto b = torch::randn({6});
    const auto plain = torch::conv2d(xr.unsqueeze(0), f, b, 1, 1).squeeze(0);
    CHECK(test::bitwise_equal(adapted_conv(xr, f, torch::zeros({6, 4, 1, 1}), 1, b), plain));

    CHECK_THROWS_AS(adapted_conv(xr, f, torch::zeros({6, 3, 1, 1})), InvalidArgument);
    CHECK_THROWS_AS(adapted_conv(torch::randn({3, 9, 9}), f, torch::zeros({6, 4, 1, 1})), InvalidArgument);
    CHECK_THROWS_AS(adapted_conv(xr, torch::randn({6, 4, 2, 2}), torch::zeros({6, 4, 1, 1})), InvalidArgument);
}

TEST_CASE("adapted_conv against a direct convolution oracle") {
    torch::manual_seed(4);
    const int ci = 2, co = 3, n = 5;
    const auto x = torch::randn({ci, n, n}, torch::kFloat64);
    const auto f = torch::randn({co, ci, 3, 3}, torch::kFloat64);
    const auto z = torch::randn({co, ci, 1, 1}, torch::kFloat64);
    const auto y = adapted_conv(x, f, z);
    auto X = x.accessor<double, 3>();
    auto F = f.accessor<double, 4>();
    auto Z = z.accessor<double, 4>();
    auto Y = y.accessor<double, 3>();
    for (int o = 0; o < co; ++o)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                double acc = 0;
                for (int c = 0; c < ci; ++c) {
                    acc += Z[o][c][0][0] * X[c][i][j];
                    for (int di = -1; di <= 1; ++di)
                        for (int dj = -1; dj <= 1; ++dj) {
                            const int a = i + di, b = j + dj;
                            if (a >= 0 && a < n && b >= 0 && b < n) acc += F[o][c][di + 1][dj + 1] * X[c][a][b];
                        }
                }
                CHECK(Y[o][i][j] == doctest::Approx(acc).epsilon(1e-12));
            }
}

TEST_CASE("segment produces probability maps") {
    auto seg = make_seg();
    torch::NoGradGuard no_grad;
    const auto p = seg->segment(torch::randn({5, 64, 64}), AdapterDomain::Real);
    CHECK(p.sizes() == torch::IntArrayRef{64, 64});
    CHECK(p.min().item<double>() >= 0.0);
    CHECK(p.max().item<double>() <= 1.0);
    CHECK(seg->segment(torch::randn({2, 3, 32, 32}), AdapterDomain::Real, Domain::Source).sizes() ==
          torch::IntArrayRef{2, 32, 32});
    CHECK(torch::isfinite(seg->logits(torch::randn({5, 32, 32}), AdapterDomain::Real)).all().item<bool>());
    CHECK_THROWS_AS(seg->segment(torch::randn({3, 32, 32}), AdapterDomain::Real), InvalidArgument);
}

TEST_CASE("zero adapters make the network domain-agnostic; adapters isolate domains") {
    auto seg = make_seg();
    torch::NoGradGuard no_grad;
    const auto x = torch::randn({2, 5, 32, 32});
    const auto before1 = seg->segment(x, AdapterDomain::Synthesized);
    const auto before2 = seg->segment(x, AdapterDomain::Real);
    CHECK(test::bitwise_equal(before1, before2));

    seg->adapted_layers()[3]->adapter1.view({-1})[0] += 0.5;
    const auto after1 = seg->segment(x, AdapterDomain::Synthesized);
    const auto after2 = seg->segment(x, AdapterDomain::Real);
    CHECK_FALSE(test::bitwise_equal(after1, before1));
    CHECK(test::bitwise_equal(after2, before2));
}

TEST_CASE("active domain selection") {
    auto seg = make_seg();
    torch::NoGradGuard no_grad;
    for (auto& l : seg->adapted_layers()) {
        l->adapter1.normal_(0, 0.1);
        l->adapter2.normal_(0, 0.1);
    }
    const auto x = torch::randn({5, 32, 32});
    CHECK(seg->active_domain() == AdapterDomain::Synthesized);
    CHECK(test::bitwise_equal(seg->segment(x), seg->segment(x, AdapterDomain::Synthesized)));
    seg->set_active_domain(2);
    CHECK(test::bitwise_equal(seg->segment(x), seg->segment(x, AdapterDomain::Real)));
    seg->set_active_domain(1);
    CHECK(test::bitwise_equal(seg->segment(x), seg->segment(x, AdapterDomain::Synthesized)));
    CHECK_THROWS_AS(seg->set_active_domain(0), InvalidArgument);
    CHECK_THROWS_AS(seg->set_active_domain(3), InvalidArgument);
}

TEST_CASE("adapters start at zero with matching shapes") {
    auto seg = make_seg();
    for (const auto& l : seg->adapted_layers()) {
        CHECK(l->adapter1.sizes() == torch::IntArrayRef{l->weight.size(0), l->weight.size(1), 1, 1});
        CHECK(l->adapter2.sizes() == l->adapter1.sizes());
        CHECK(l->adapter1.abs().sum().item<double>() == 0.0);
        CHECK(l->adapter2.abs().sum().item<double>() == 0.0);
    }
}

TEST_CASE("gradients on one domain never reach the other domain's adapters") {
    torch::manual_seed(2);
    SegConfig cfg;
    cfg.width = 2;
    cfg.activation = Activation::Softplus;
    auto seg = SegNet(cfg);
    seg->to(torch::kFloat64);
    for (auto& l : seg->adapted_layers()) {
        l->adapter1.data().normal_(0, 0.2);
        l->adapter2.data().normal_(0, 0.2);
    }
    const auto x = torch::randn({1, 5, 8, 8}, torch::kFloat64);
    const auto y = (torch::rand({1, 8, 8}, torch::kFloat64) > 0.7).to(torch::kFloat64);
    auto loss = [&] { return dice_loss(seg->segment(x, AdapterDomain::Real), y); };

    seg->zero_grad();
    loss().backward();
    for (const auto& p : seg->adapter_parameters(AdapterDomain::Synthesized))
        CHECK((!p.grad().defined() || p.grad().abs().max().item<double>() == 0.0));
    // Finite differences agree: nudging a synthesized-domain adapter does not move the loss.
    torch::NoGradGuard no_grad;
    const double f0 = loss().item<double>();
    for (auto p : seg->adapter_parameters(AdapterDomain::Synthesized)) {
        p.view({-1})[0] += 1e-3;
        CHECK(loss().item<double>() == f0);
        p.view({-1})[0] -= 1e-3;
    }
    bool moved = false;
    for (auto p : seg->adapter_parameters(AdapterDomain::Real)) {
        p.view({-1})[0] += 1e-3;
        moved |= loss().item<double>() != f0;
        p.view({-1})[0] -= 1e-3;
    }
    CHECK(moved);
}

TEST_CASE("three-layer toy segmenter: zero adapters and domain isolation") {
    // Three adapted convolutions with per-domain adapter banks, f64.
    torch::manual_seed(6);
    const std::vector<std::array<int, 2>> shapes{{2, 3}, {3, 3}, {3, 1}};
    std::vector<torch::Tensor> filters, biases, bank1, bank2;
    for (auto [ci, co] : shapes) {
        filters.push_back(torch::randn({co, ci, 3, 3}, torch::kFloat64) * 0.4);
        biases.push_back(torch::randn({co}, torch::kFloat64) * 0.1);
        bank1.push_back(torch::zeros({co, ci, 1, 1}, torch::kFloat64).requires_grad_());
        bank2.push_back(torch::zeros({co, ci, 1, 1}, torch::kFloat64).requires_grad_());
    }
    const auto x = torch::randn({2, 2, 6, 6}, torch::kFloat64);
    const auto y = (torch::rand({2, 6, 6}, torch::kFloat64) > 0.6).to(torch::kFloat64);
    auto forward = [&](const std::vector<torch::Tensor>& bank) {
        auto h = x;
        for (std::size_t l = 0; l < 3; ++l) {
            h = adapted_conv(h, filters[l], bank[l], 1, biases[l]);
            h = l < 2 ? torch::softplus(h) : torch::sigmoid(h);
        }
        return h.squeeze(1);
    };
    auto plain = [&] {
        auto h = x;
        for (std::size_t l = 0; l < 3; ++l) {
            h = torch::conv2d(h, filters[l], biases[l], 1, 1);
            h = l < 2 ? torch::softplus(h) : torch::sigmoid(h);
        }
        return h.squeeze(1);
    };
    {
        torch::NoGradGuard no_grad;
        CHECK(test::bitwise_equal(forward(bank1), plain()));
        CHECK(test::bitwise_equal(forward(bank2), plain()));
        for (auto& z : bank1) z.normal_(0, 0.3);
        for (auto& z : bank2) z.normal_(0, 0.3);
    }

    dice_loss(forward(bank2), y).backward();
    for (const auto& z : bank1) CHECK_FALSE(z.grad().defined());
    for (const auto& z : bank2) CHECK(z.grad().abs().sum().item<double>() > 0.0);

    // Finite differences: domain-1 adapters do not move the domain-2 loss,
    // and the domain-2 gradient matches central differences.
    torch::NoGradGuard no_grad;
    const double h = 1e-3;
    const double f0 = dice_loss(forward(bank2), y).item<double>();
    for (auto& z : bank1) {
        auto flat = z.view({-1});
        for (int64_t i = 0; i < flat.numel(); ++i) {
            flat[i] += h;
            CHECK(dice_loss(forward(bank2), y).item<double>() == f0);
            flat[i] -= h;
        }
    }
    double worst = 0;
    for (auto& z : bank2) {
        auto flat = z.view({-1});
        const auto g = z.grad().view({-1});
        for (int64_t i = 0; i < flat.numel(); ++i) {
            const double orig = flat[i].item<double>();
            flat[i] = orig + h;
            const double fp = dice_loss(forward(bank2), y).item<double>();
            flat[i] = orig - h;
            const double fm = dice_loss(forward(bank2), y).item<double>();
            flat[i] = orig;
            const double fd = (fp - fm) / (2 * h), an = g[i].item<double>();
            worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-4}));
        }
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("adapter parameter share follows the layer shapes") {
    auto seg = make_seg();
    double adapters = 0, backbone = 0;
    for (const auto& l : seg->adapted_layers()) {
        const double ci = l->weight.size(1), co = l->weight.size(0), k = l->weight.size(2);
        adapters += ci * co;
        backbone += ci * co * k * k + co;
    }
    const double share = double(test::count_params(seg->adapter_parameters(AdapterDomain::Real))) /
                         double(test::count_params(seg->backbone_parameters()));
    CHECK(share == doctest::Approx(adapters / backbone).epsilon(1e-12));
    // 3x3 convolutions dominate, so one adapter bank costs about 1/9 of the backbone.
    CHECK(share < 0.125);
    MESSAGE("adapter/backbone parameter share per domain: " << share);
}

TEST_CASE("parameter groups partition the network") {
    auto seg = make_seg();
    const auto total = test::count_params(seg->parameters());
    const auto parts = test::count_params(seg->backbone_parameters()) +
                       test::count_params(seg->adapter_parameters(AdapterDomain::Synthesized)) +
                       test::count_params(seg->adapter_parameters(AdapterDomain::Real)) +
                       test::count_params(seg->stem_parameters(Domain::Source)) +
                       test::count_params(seg->stem_parameters(Domain::Target));
    CHECK(parts == total);
}

}  // TEST_SUITE
