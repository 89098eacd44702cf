#include "helpers.hpp"

using namespace mrcine;
using test::random_c;
using test::random_r;

namespace {

// direct cross-correlation: zero pad along x, circular along y and t
RTensor<double> loop_conv(const ConvLayer<double>& l, const RTensor<double>& in) {
  const Index nx = in.dim(0), ny = in.dim(1), nt = in.dim(2);
  RTensor<double> out({nx, ny, nt, l.fout});
  for (Index x = 0; x < nx; ++x)
    for (Index y = 0; y < ny; ++y)
      for (Index t = 0; t < nt; ++t)
        for (Index o = 0; o < l.fout; ++o) {
          double acc = l.bias[o];
          for (Index a = 0; a < l.dx; ++a)
            for (Index b = 0; b < l.dy; ++b)
              for (Index c = 0; c < l.dt; ++c) {
                const Index xx = x + a - l.dx / 2;
                if (xx < 0 || xx >= nx) continue;
                const Index yy = ((y + b - l.dy / 2) % ny + ny) % ny, tt = ((t + c - l.dt / 2) % nt + nt) % nt;
                for (Index i = 0; i < l.fin; ++i) acc += l.weight(a, b, c, i, o) * in(xx, yy, tt, i);
              }
          out(x, y, t, o) = acc;
        }
  return out;
}

ConvLayer<double> random_layer(Index dx, Index dy, Index dt, Index fin, Index fout, std::uint64_t seed) {
  ConvLayer<double> l(dx, dy, dt, fin, fout);
  l.weight = random_r<double>(l.weight.shape(), seed);
  l.bias = random_r<double>(l.bias.shape(), seed + 1);
  return l;
}

template <typename R>
void randomize(UnrolledModel<R>& m, std::uint64_t seed, double scale = 0.05) {
  Rng rng(seed);
  for (auto& p : named_params(m))
    if (p.name != "steps")
      for (Index i = 0; i < p.size; ++i) p.data[i] = static_cast<R>(scale * rng.normal());
}

RTensor<double> roll_y(const RTensor<double>& t, Index s) {
  RTensor<double> out(t.shape());
  const Index ny = t.dim(1);
  for (Index x = 0; x < t.dim(0); ++x)
    for (Index y = 0; y < ny; ++y)
      for (Index k = 0; k < t.dim(2); ++k)
        for (Index c = 0; c < t.dim(3); ++c) out(x, (y + s) % ny, k, c) = t(x, y, k, c);
  return out;
}

}  // namespace

TEST(Network, FsFormula) {
  EXPECT_EQ(compute_fs(3, 3, 3, 96, 96), 216);
  EXPECT_EQ(compute_fs(3, 3, 3, 4, 96), (27 * 4 * 96) / (9 * 4 + 3 * 96));
  EXPECT_EQ(compute_fs(3, 3, 3, 1, 1), 27 / 12);
  EXPECT_THROW(compute_fs(0, 3, 3, 1, 1), std::invalid_argument);
}

TEST(Network, ParameterCountsMatchAcrossKinds) {
  for (Index ch : {16, 96, 200})
    for (Index k : {1, 4, 10}) {
      NetConfig c3{k, 5, ch, 2, ConvKind::conv3d};
      NetConfig c2 = c3;
      c2.kind = ConvKind::conv2p1d;
      const auto m3 = make_model<float>(c3), m2 = make_model<float>(c2);
      EXPECT_EQ(count_params(m3), count_params(c3));
      EXPECT_EQ(count_params(m2), count_params(c2));
      EXPECT_LE(std::abs(count_params(c3) - count_params(c2)), fs_rounding_slack(c3));
    }
  NetConfig one{1, 5, 96, 2, ConvKind::conv3d};
  // 27·(4·96 + 3·96·96 + 96·4) + 3·96 + 4 weights and biases plus one step
  EXPECT_EQ(count_params(one), 27 * (4 * 96 + 3 * 96 * 96 + 96 * 4) + 4 * 96 + 4 + 1);
}

TEST(Network, ConvMatchesLoopOracle) {
  for (auto [dx, dy, dt] : std::vector<std::tuple<Index, Index, Index>>{{3, 3, 3}, {3, 3, 1}, {1, 1, 3}, {5, 3, 1}}) {
    const auto l = random_layer(dx, dy, dt, 3, 4, 10 + dx + dt);
    const auto in = random_r<double>({7, 6, 5, 3}, 2);
    EXPECT_LT(max_abs_diff(conv_forward(l, in), loop_conv(l, in)), 1e-10) << dx << dy << dt;
  }
  const auto l = random_layer(3, 3, 3, 2, 2, 1);
  EXPECT_THROW(conv_forward(l, random_r<double>({4, 4, 4, 3}, 1)), std::invalid_argument);
  ConvLayer<double> even(2, 3, 3, 1, 1);
  EXPECT_THROW(conv_forward(even, random_r<double>({4, 4, 4, 1}, 1)), std::invalid_argument);
}

TEST(Network, ConvBackwardIsAdjoint) {
  const auto l = random_layer(3, 3, 3, 3, 2, 4);
  const auto in = random_r<double>({5, 6, 4, 3}, 5), g = random_r<double>({5, 6, 4, 2}, 6);
  ConvLayer<double> lin = l;
  lin.bias.fill(0.0);
  ConvLayer<double> grad(3, 3, 3, 3, 2);
  const auto gin = conv_backward(lin, in, g, grad);
  EXPECT_NEAR(inner(conv_forward(lin, in), g), inner(in, gin), 1e-9 * norm(in) * norm(g));
  // with zero bias <g, conv_w(in)> is linear in w
  EXPECT_NEAR(inner(grad.weight, lin.weight), inner(conv_forward(lin, in), g), 1e-9 * norm(in) * norm(g));
}

TEST(Network, CircularShiftEquivarianceAlongPhaseEncode) {
  for (auto kind : {ConvKind::conv3d, ConvKind::conv2p1d}) {
    auto blk = make_block<double>(kind, 4, 6, 5);
    Rng rng(3);
    for (auto& u : blk.units) {
      u.a.weight = random_r<double>(u.a.weight.shape(), rng.bits(), 0.2);
      if (kind == ConvKind::conv2p1d) u.b.weight = random_r<double>(u.b.weight.shape(), rng.bits(), 0.2);
    }
    const auto x = random_r<double>({6, 8, 4, 4}, 11);
    const auto a = roll_y(block_forward(blk, x, false, static_cast<BlockCache<double>*>(nullptr)), 3);
    const auto b = block_forward(blk, roll_y(x, 3), false, static_cast<BlockCache<double>*>(nullptr));
    EXPECT_LT(max_abs_diff(a, b), 1e-10) << to_string(kind);
  }
}

TEST(Network, ReceptiveFieldIsElevenCubed) {
  for (auto kind : {ConvKind::conv3d, ConvKind::conv2p1d}) {
    auto blk = make_block<double>(kind, 2, 4, 5);
    Rng rng(5);
    for (auto& u : blk.units) {
      u.a.weight = random_r<double>(u.a.weight.shape(), rng.bits());
      if (kind == ConvKind::conv2p1d) u.b.weight = random_r<double>(u.b.weight.shape(), rng.bits());
    }
    const Index n = 21;
    RTensor<double> x({n, n, n, 2});
    x(10, 10, 10, 0) = 1.0;
    auto y = block_forward(blk, x, true, static_cast<BlockCache<double>*>(nullptr));
    y -= x;
    Index lo[3] = {n, n, n}, hi[3] = {-1, -1, -1};
    for (Index a = 0; a < n; ++a)
      for (Index b = 0; b < n; ++b)
        for (Index c = 0; c < n; ++c)
          if (std::abs(y(a, b, c, 0)) + std::abs(y(a, b, c, 1)) > 1e-12) {
            const Index p[3] = {a, b, c};
            for (int d = 0; d < 3; ++d) {
              lo[d] = std::min(lo[d], p[d]);
              hi[d] = std::max(hi[d], p[d]);
            }
          }
    for (int d = 0; d < 3; ++d) EXPECT_EQ(hi[d] - lo[d] + 1, 11) << to_string(kind) << " axis " << d;
  }
}

TEST(Network, ChannelPackingRoundTrip) {
  const auto x = random_c<float>({4, 5, 2, 3}, 1);
  const auto h = complex_to_channels(x);
  EXPECT_EQ(h.shape(), (Shape{4, 5, 3, 4}));
  EXPECT_EQ(channels_to_complex(h), x);
  EXPECT_THROW(channels_to_complex(RTensor<float>({2, 2, 2, 3})), std::invalid_argument);
}

TEST(Network, FreshModelIsPureDataConsistency) {
  for (auto kind : {ConvKind::conv3d, ConvKind::conv2p1d}) {
    auto m = make_model<float>({3, 5, 8, 2, kind});
    init_model(m, 1);
    const auto fm = test::random_model<float>(8, 6, 3, 2, 4, 2);
    const auto y = random_c<float>(fm.data_shape(), 3);
    CTensor<float> x = apply_A_adjoint(y, fm);
    const auto aty = x;
    for (int k = 0; k < 3; ++k) x = dc_update(x, aty, fm, 0.5f);
    EXPECT_LT(test::rel_diff(forward(m, y, fm), x), 1e-5);
  }
}

TEST(Network, RejectsMapSetMismatch) {
  auto m = make_model<float>({2, 5, 8, 2, ConvKind::conv3d});
  const auto fm = test::random_model<float>(8, 6, 3, 1, 4, 2);
  try {
    forward(m, CTensor<float>(fm.data_shape()), fm);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("2 map sets"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("has 1"), std::string::npos);
  }
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  for (auto kind : {ConvKind::conv3d, ConvKind::conv2p1d}) {
    auto m = make_model<float>({2, 5, 8, 2, kind});
    randomize(m, 4);
    m.steps = {0.25f, 0.75f};
    const auto path = std::filesystem::temp_directory_path() / ("mrcine_ckpt_" + to_string(kind) + ".dle");
    save_checkpoint(path, m);
    const auto back = load_checkpoint<float>(path);
    EXPECT_EQ(back.cfg.kind, kind);
    EXPECT_EQ(back.cfg.iterations, 2);
    EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(m));
    const auto fm = test::random_model<float>(8, 6, 3, 2, 4, 2);
    const auto y = random_c<float>(fm.data_shape(), 3);
    EXPECT_EQ(forward(back, y, fm), forward(m, y, fm));
    // cross precision load
    const auto d = load_checkpoint<double>(path);
    EXPECT_EQ(d.steps[0], 0.25);
    std::filesystem::remove(path);
  }
}

TEST(Checkpoint, MalformedInputsAreRejected) {
  auto m = make_model<float>({1, 3, 4, 1, ConvKind::conv3d});
  auto b = encode_checkpoint(m);
  auto bad = b;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint<float>(bad), FormatError);
  bad = b;
  bad[4] = 9;
  EXPECT_THROW(decode_checkpoint<float>(bad), FormatError);
  bad = b;
  bad[24] = 7;
  EXPECT_THROW(decode_checkpoint<float>(bad), FormatError);
  bad = b;
  bad.resize(bad.size() - 3);
  EXPECT_THROW(decode_checkpoint<float>(bad), FormatError);
  bad = b;
  bad.push_back(0);
  EXPECT_THROW(decode_checkpoint<float>(bad), FormatError);
  // header claims more channels than the records hold
  bad = b;
  bad[16] = 5;
  EXPECT_THROW(decode_checkpoint<float>(bad), FormatError);
  EXPECT_THROW(load_checkpoint<float>("/nonexistent/model.dle"), std::exception);
}
