#include <doctest.h>

#include "chanest/channelformer.hpp"
#include "test_util.hpp"

using namespace chanest;
using model::Channelformer;
using model::ModelConfig;
using nn::Tensor;
using nn::Var;

TEST_CASE("published parameter counts are exact") {
    const auto off = Channelformer::build(ModelConfig::offline(), 1);
    CHECK(off.parameter_count() == 117659);
    CHECK(off.encoder_parameter_count() == 21358);
    CHECK(off.decoder_parameter_count() == 96301);

    const auto on = Channelformer::build(ModelConfig::online(), 1);
    CHECK(on.parameter_count() == 32069);
    CHECK(on.encoder_parameter_count() == 21358);
    CHECK(on.decoder_parameter_count() == 10711);
}

TEST_CASE("input marshalling") {
    SUBCASE("purely real estimates leave channel two empty") {
        est::PilotEstimate e;
        for (std::size_t i = 0; i < e.h.size(); ++i)
            e.h[i] = cmat::cd{static_cast<double>(i), 0.0};
        const Tensor x = model::input_from_ls(e);
        CHECK(x.shape == std::vector<std::size_t>{72, 2});
        for (std::size_t r = 0; r < 72; ++r) CHECK(x.at(r, 1) == 0.0);
    }
    SUBCASE("second pilot symbol lands at rows 36+k") {
        est::PilotEstimate e;
        e.at(7, 1) = cmat::cd{0.0, 2.5};
        const Tensor x = model::input_from_ls(e);
        CHECK(x.at(36 + 7, 1) == 2.5);
        CHECK(x.at(7, 1) == 0.0);
    }
    SUBCASE("online output marshalling round trip") {
        nn::Rng rng(77);
        std::vector<cmat::cd> cols(72 * 2);
        for (auto& v : cols) v = cmat::cd{rng.gaussian(), rng.gaussian()};
        const Tensor t = model::marshal_pilot_columns(cols);
        const auto back = model::output_to_pilot_columns(t);
        for (std::size_t i = 0; i < cols.size(); ++i) CHECK(back[i] == cols[i]);
    }
    SUBCASE("offline output marshalling round trip") {
        nn::Rng rng(78);
        ofdm::Slot h;
        for (auto& v : h.g) v = cmat::cd{rng.gaussian(), rng.gaussian()};
        const Tensor t = model::marshal_full_slot(h);
        const ofdm::Slot back = model::output_to_frame(t);
        CHECK(back.g == h.g);
    }
    SUBCASE("imaginary channel zero gives a real-valued frame") {
        Tensor t({1008, 2}, 0.0);
        for (std::size_t r = 0; r < 1008; ++r) t.at(r, 0) = 1.0;
        const ofdm::Slot s = model::output_to_frame(t);
        for (const auto& v : s.g) {
            CHECK(v.real() == 1.0);
            CHECK(v.imag() == 0.0);
        }
    }
}

TEST_CASE("forward pass shapes and determinism") {
    nn::Rng rng(5);
    const Tensor x = testutil::random_tensor({72, 2}, rng);

    const auto off = Channelformer::build(ModelConfig::offline(), 42);
    const auto on = Channelformer::build(ModelConfig::online(), 42);
    const Var yo = off.forward(x);
    const Var yn = on.forward(x);
    CHECK(yo->value.shape == std::vector<std::size_t>{1008, 2});
    CHECK(yn->value.shape == std::vector<std::size_t>{144, 2});
    CHECK(yo->value.all_finite());
    CHECK(yn->value.all_finite());

    const auto off2 = Channelformer::build(ModelConfig::offline(), 42);
    CHECK(off2.forward(x)->value.data == yo->value.data);

    CHECK_THROWS_AS(off.forward(Tensor({72, 3})), std::invalid_argument);
}

TEST_CASE("encoder with zeroed weights reduces to stacked normalization") {
    auto m = Channelformer::build(ModelConfig::online(), 9);
    for (std::size_t i = 0; i < m.params().size(); ++i) {
        const std::string& name = m.names()[i];
        if (name.rfind("enc.", 0) != 0) continue;
        if (name.find(".norm") != std::string::npos) continue;
        for (double& v : m.params()[i]->value.data) v = 0.0;
    }
    nn::Rng rng(10);
    const Tensor x = testutil::random_tensor({72, 2}, rng, 2.0);
    // with zero attention and pre-network weights the encoder is
    // layer_norm(layer_norm(x)), both with unit weight and zero bias
    Var l1 = nn::layer_norm(nn::make_leaf(x, false), nn::make_leaf(Tensor({72}, 1.0), false),
                            nn::make_leaf(Tensor({72}, 0.0), false));
    Var l2 = nn::layer_norm(l1, nn::make_leaf(Tensor({72}, 1.0), false),
                            nn::make_leaf(Tensor({72}, 0.0), false));
    // reconstruct the encoder from primitives on the zeroed weights
    Var in = nn::make_leaf(x, false);
    Var y = nn::fully_connected(in, m.p("enc.fc1.W"), m.p("enc.fc1.b"));
    auto mh = nn::multi_head_attention(y, 2, m.p("enc.fc2.W"), m.p("enc.fc2.b"));
    Var a1 = nn::layer_norm(nn::add(mh.output, in), m.p("enc.norm1.w"), m.p("enc.norm1.b"));
    Var z = nn::reshape(a1, {72, 2, 1});
    Var c2 = nn::conv2d(nn::gelu(nn::conv2d(z, m.p("enc.pre.conv1.K"), m.p("enc.pre.conv1.b"))),
                        m.p("enc.pre.conv2.K"), m.p("enc.pre.conv2.b"));
    Var enc = nn::layer_norm(nn::add(c2, z), m.p("enc.norm2.w"), m.p("enc.norm2.b"));
    for (std::size_t i = 0; i < a1->value.numel(); ++i)
        CHECK(a1->value.data[i] == doctest::Approx(l1->value.data[i]).epsilon(1e-12));
    for (std::size_t i = 0; i < enc->value.numel(); ++i)
        CHECK(enc->value.data[i] == doctest::Approx(l2->value.data[i]).epsilon(1e-12));
}

TEST_CASE("full forward equals a manual composition of the primitives") {
    const auto cfgs = {ModelConfig::offline(), ModelConfig::online()};
    for (const auto& cfg : cfgs) {
        auto m = Channelformer::build(cfg, 31);
        nn::Rng rng(32);
        const Tensor x = testutil::random_tensor({72, 2}, rng);
        const Var got = m.forward(x);

        Var in = nn::make_leaf(x, false);
        Var y = nn::fully_connected(in, m.p("enc.fc1.W"), m.p("enc.fc1.b"));
        auto mh = nn::multi_head_attention(y, 2, m.p("enc.fc2.W"), m.p("enc.fc2.b"));
        Var a1 = nn::layer_norm(nn::add(mh.output, in), m.p("enc.norm1.w"), m.p("enc.norm1.b"));
        Var z = nn::reshape(a1, {72, 2, 1});
        Var c1 = nn::gelu(nn::conv2d(z, m.p("enc.pre.conv1.K"), m.p("enc.pre.conv1.b")));
        Var c2 = nn::conv2d(c1, m.p("enc.pre.conv2.K"), m.p("enc.pre.conv2.b"));
        Var enc = nn::layer_norm(nn::add(c2, z), m.p("enc.norm2.w"), m.p("enc.norm2.b"));
        Var d = nn::conv2d(enc, m.p("dec.conv_in.K"), m.p("dec.conv_in.b"));
        for (int k = 0; k < cfg.residual_blocks; ++k) {
            const std::string blk = "dec.block" + std::to_string(k);
            Var t = nn::conv2d(nn::relu(nn::conv2d(d, m.p(blk + ".conv1.K"), m.p(blk + ".conv1.b"))),
                               m.p(blk + ".conv2.K"), m.p(blk + ".conv2.b"));
            d = nn::layer_norm(nn::add(t, d), m.p(blk + ".norm.w"), m.p(blk + ".norm.b"));
        }
        std::vector<Var> chans;
        for (int c = 0; c < cfg.dec_filters; ++c)
            chans.push_back(nn::fully_connected(nn::slice_channel(d, c), m.p("dec.fc_up.W"),
                                                m.p("dec.fc_up.b")));
        Var up = nn::stack_channels(chans);
        Var manual = nn::reshape(nn::conv2d(up, m.p("dec.conv_out.K"), m.p("dec.conv_out.b")),
                                 {cfg.out_rows(), 2});
        REQUIRE(manual->value.shape == got->value.shape);
        for (std::size_t i = 0; i < manual->value.numel(); ++i)
            CHECK(got->value.data[i] == manual->value.data[i]);
    }
}

TEST_CASE("encoder output shape is 72x2x1 in both configurations") {
    nn::Rng rng(19);
    const Tensor x = testutil::random_tensor({72, 2}, rng);
    for (const auto& cfg : {ModelConfig::offline(), ModelConfig::online()}) {
        const auto m = Channelformer::build(cfg, 20);
        const Var enc = m.encode(x);
        CHECK(enc->value.shape == std::vector<std::size_t>{72, 2, 1});
        const Var full = m.forward(x);
        const Var split = m.decode(m.encode(x));
        CHECK(full->value.data == split->value.data);
        CHECK_THROWS_AS(m.decode(nn::make_leaf(Tensor({72, 2}), false)), std::invalid_argument);
    }
}

TEST_CASE("zero final convolution gives a constant output") {
    auto m = Channelformer::build(ModelConfig::online(), 12);
    for (double& v : m.p("dec.conv_out.K")->value.data) v = 0.0;
    m.p("dec.conv_out.b")->value.data[0] = -0.75;
    nn::Rng rng(13);
    const Var y = m.forward(testutil::random_tensor({72, 2}, rng));
    for (double v : y->value.data) CHECK(v == doctest::Approx(-0.75));
}

TEST_CASE("weight files round trip bit exactly") {
    auto m = Channelformer::build(ModelConfig::online(), 21);
    m.mask.assign(m.params().size(), {});
    m.mask[0].assign(m.params()[0]->value.numel(), 1);
    m.mask[0][5] = 0;
    m.params()[0]->value.data[5] = 0.0;
    const std::string path = "weights_test.cfw";
    m.save(path);
    const auto back = Channelformer::load(path);
    CHECK(back.config().mode == ModelConfig::Mode::online);
    CHECK(back.parameter_count() == m.parameter_count());
    for (std::size_t i = 0; i < m.params().size(); ++i)
        CHECK(back.params()[i]->value.data == m.params()[i]->value.data);
    REQUIRE(back.mask.size() == m.mask.size());
    CHECK(back.mask[0] == m.mask[0]);
    std::remove(path.c_str());
}

TEST_CASE("corrupted weight files are rejected") {
    auto m = Channelformer::build(ModelConfig::online(), 22);
    const std::string path = "weights_bad.cfw";
    m.save(path);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.write("XXXX", 4);
    }
    CHECK_THROWS(Channelformer::load(path));
    std::remove(path.c_str());
    CHECK_THROWS(Channelformer::load("missing_file.cfw"));
}

TEST_CASE("gradients of both full models match finite differences") {
    nn::Rng rng(61);
    for (const auto& cfg : {ModelConfig::online(), ModelConfig::offline()}) {
        auto m = Channelformer::build(cfg, 62);
        const Tensor x = testutil::random_tensor({72, 2}, rng);
        const Tensor target(std::vector<std::size_t>{cfg.out_rows(), 2}, 0.1);
        auto loss = [&]() { return nn::huber_loss(m.forward(x), target, 1.0); };
        CHECK(testutil::gradcheck(m.params(), loss, 1e-5, 6) < 1e-4);
    }
}

TEST_CASE("attention probe") {
    auto m = Channelformer::build(ModelConfig::online(), 71);
    nn::Rng rng(72);
    std::vector<Tensor> inputs;
    for (int i = 0; i < 4; ++i) inputs.push_back(testutil::random_tensor({72, 2}, rng));

    SUBCASE("probability rows sum to one") {
        model::AttentionProbe probe;
        (void)m.forward(inputs[0], &probe);
        REQUIRE(probe.probabilities.size() == 2);
        for (const auto& p : probe.probabilities) {
            REQUIRE(p.shape == std::vector<std::size_t>{36, 36});
            for (std::size_t i = 0; i < 36; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < 36; ++j) s += p.at(i, j);
                CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
            }
        }
        REQUIRE(probe.outputs.size() == 2);
        CHECK(probe.outputs[0].shape == std::vector<std::size_t>{36, 2});
    }
    SUBCASE("identical inputs average to the single-pass value") {
        const std::vector<Tensor> same(3, inputs[0]);
        const auto batch = model::attention_probe_run(m, same);
        model::AttentionProbe probe;
        (void)m.forward(inputs[0], &probe);
        for (std::size_t h = 0; h < 2; ++h)
            for (std::size_t i = 0; i < probe.outputs[h].data.size(); ++i)
                CHECK(batch.mean_abs[h].data[i] ==
                      doctest::Approx(std::abs(probe.outputs[h].data[i])).epsilon(1e-12));
    }
}
