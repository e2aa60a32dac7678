#include "doctest_torch.hpp"

#include "support.hpp"
#include "uada/losses.hpp"

using namespace uada;

// Analytic gradients of every objective term against central differences, on
// f64 toy networks small enough to perturb every parameter. Each term is
// checked against the parameters of the modules on its path.

namespace {

constexpr double kTol = 1e-4;

struct Toy {
    TranslationNet net{nullptr};
    SegNet seg{nullptr};
    torch::Tensor xs, xt, ys, style_s, style_t;     // 8x8, one image
    torch::Tensor xs16, xt16, ys16, style_t16;      // 16x16 for the discriminators
};

Toy make_toy() {
    Toy t;
    torch::manual_seed(11);
    t.net = TranslationNet(test::toy_translation_config());
    t.net->to(torch::kFloat64);
    SegConfig sc;
    sc.source_channels = sc.target_channels = 1;
    sc.width = 1;
    sc.activation = Activation::Softplus;
    t.seg = SegNet(sc);
    t.seg->to(torch::kFloat64);
    for (auto& l : t.seg->adapted_layers()) l->adapter1.data().normal_(0, 0.1);
    t.xs = torch::randn({1, 1, 8, 8}, torch::kFloat64);
    t.xt = torch::randn({1, 1, 8, 8}, torch::kFloat64);
    t.ys = (torch::rand({1, 8, 8}, torch::kFloat64) > 0.6).to(torch::kFloat64);
    t.style_s = torch::randn({1, 2}, torch::kFloat64);
    t.style_t = torch::randn({1, 2}, torch::kFloat64);
    t.xs16 = torch::randn({1, 1, 16, 16}, torch::kFloat64);
    t.xt16 = torch::randn({1, 1, 16, 16}, torch::kFloat64);
    t.ys16 = (torch::rand({1, 16, 16}, torch::kFloat64) > 0.6).to(torch::kFloat64);
    t.style_t16 = torch::randn({1, 2}, torch::kFloat64);
    return t;
}

std::vector<torch::Tensor> params_of(std::initializer_list<std::shared_ptr<torch::nn::Module>> modules) {
    std::vector<torch::Tensor> out;
    for (const auto& m : modules)
        for (const auto& p : m->parameters()) out.push_back(p);
    return out;
}

void check(const char* name, const std::function<torch::Tensor()>& loss, const std::vector<torch::Tensor>& params) {
    const auto r = test::finite_difference_check(loss, params, 1e-3);
    INFO(name << ": checked " << r.checked << ", kinks skipped " << r.skipped_kinks << ", max rel " << r.max_rel);
    CHECK(r.checked > 0);
    CHECK(r.skipped_kinks <= r.checked / 4);  // most coordinates must be smooth enough to check
    CHECK(r.max_rel < kTol);
}

}  // namespace

TEST_SUITE("gradients") {

TEST_CASE("toy modules stay under a thousand parameters") {
    auto t = make_toy();
    CHECK(test::count_params(t.seg->parameters()) <= 1000);
    for (auto d : {Domain::Source, Domain::Target})
        for (const auto& m : std::initializer_list<std::shared_ptr<torch::nn::Module>>{
                 t.net->content_encoder(d).ptr(), t.net->style_encoder(d).ptr(), t.net->generator(d).ptr(),
                 t.net->discriminator(d).ptr()})
            CHECK(test::count_params(m->parameters()) <= 1000);
    MESSAGE("toy translator " << test::count_params(t.net->parameters()) << " parameters in total, toy segmenter "
                              << test::count_params(t.seg->parameters()));
}

TEST_CASE("dice loss") {
    auto t = make_toy();
    check("dice", [&] { return dice_loss(t.seg->segment(t.xs, AdapterDomain::Synthesized), t.ys); },
          t.seg->parameters());
}

TEST_CASE("adversarial terms") {
    auto t = make_toy();
    auto fake = [&] { return t.net->translate(t.xs16, Domain::Source, Domain::Target, t.style_t16); };
    check("gan (discriminator side)",
          [&] {
              return gan_loss_discriminator(t.net->discriminate(t.xt16, Domain::Target),
                                            t.net->discriminate(fake().detach(), Domain::Target));
          },
          t.net->discriminator(Domain::Target)->parameters());
    check("gan (generator side)", [&] { return gan_loss_generator(t.net->discriminate(fake(), Domain::Target)); },
          params_of({t.net->content_encoder(Domain::Source).ptr(), t.net->generator(Domain::Target).ptr()}));
}

TEST_CASE("image reconstruction") {
    auto t = make_toy();
    check("recon", [&] { return self_recon_loss(t.net, t.xs, Domain::Source); },
          params_of({t.net->content_encoder(Domain::Source).ptr(), t.net->style_encoder(Domain::Source).ptr(),
                     t.net->generator(Domain::Source).ptr()}));
}

TEST_CASE("latent reconstruction") {
    auto t = make_toy();
    check("content", [&] { return content_recon_loss(t.net, t.xs, Domain::Source, t.style_t); },
          params_of({t.net->content_encoder(Domain::Source).ptr(), t.net->generator(Domain::Target).ptr(),
                     t.net->content_encoder(Domain::Target).ptr()}));
    check("style", [&] { return style_recon_loss(t.net, t.xt, Domain::Target, t.style_s); },
          params_of({t.net->content_encoder(Domain::Target).ptr(), t.net->generator(Domain::Source).ptr(),
                     t.net->style_encoder(Domain::Source).ptr()}));
}

TEST_CASE("cross-cycle consistency") {
    auto t = make_toy();
    check("cycle", [&] { return cycle_loss(t.net, t.xt, Domain::Target, t.style_s); }, t.net->generator_parameters());
}

TEST_CASE("synthesized-image segmentation") {
    auto t = make_toy();
    auto params = params_of({t.net->content_encoder(Domain::Source).ptr(), t.net->generator(Domain::Target).ptr()});
    for (const auto& p : t.seg->parameters()) params.push_back(p);
    check("seg_synth", [&] { return seg_synth_loss(t.seg, t.net, t.xs, t.ys, t.style_t); }, params);
}

TEST_CASE("weighted total objective") {
    auto t = make_toy();
    auto params = t.net->generator_parameters();
    for (const auto& p : t.seg->parameters()) params.push_back(p);
    auto loss = [&] {
        const auto ds = directional_terms(t.net, t.xs16, Domain::Source, t.style_t16);
        const auto dt = directional_terms(t.net, t.xt16, Domain::Target, t.style_s);
        LossTerms terms;
        terms.gan_t = gan_loss_generator(t.net->discriminate(ds.translated, Domain::Target));
        terms.gan_s = gan_loss_generator(t.net->discriminate(dt.translated, Domain::Source));
        terms.recon_s = ds.self_recon;
        terms.recon_t = dt.self_recon;
        terms.content_s = dt.content_recon;
        terms.content_t = ds.content_recon;
        terms.style_s = dt.style_recon;
        terms.style_t = ds.style_recon;
        terms.cycle_s = ds.cycle;
        terms.cycle_t = dt.cycle;
        terms.seg_synth = dice_loss(t.seg->segment(ds.translated, AdapterDomain::Synthesized), t.ys16);
        return total_objective(terms, LossWeights{}).total;
    };
    check("total", loss, params);
}

}  // TEST_SUITE
