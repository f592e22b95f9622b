#include <gtest/gtest.h>

#include "napg/synth.hpp"
#include "napg/training.hpp"

using namespace napg;

namespace {

RunConfig config(DecoderType type, std::size_t n, OpPooling pooling = OpPooling::Selected) {
  RunConfig c;
  c.model = type;
  c.n_max_steps = n;
  c.encoder.d_model = 16;
  c.encoder.layers = 1;
  c.encoder.heads = 2;
  c.encoder.ffn_dim = 32;
  c.napg.hidden = 12;
  c.napg.pooling = pooling;
  c.epochs = 1;
  c.batch_size = 4;
  c.seed = 3;
  c.finalize();
  return c;
}

Dataset data(std::size_t n, double span) {
  GenSpec s;
  s.n_train = 80;
  s.n_dev = 60;
  s.n_test = 0;
  s.step_distribution.clear();
  for (std::size_t k = 1; k <= n; ++k) s.step_distribution[k] = 1.0 / static_cast<double>(n);
  s.span_fraction = span;
  s.seed = 21;
  return generate_dataset(s);
}

/// Fast-path records equal graph-path records field for field.
void expect_same_predictions(const Model& m, const std::vector<Example>& examples) {
  const FastDecoder fast = m.fast_decoder();
  std::size_t programs = 0;
  for (const Example& ex : examples) {
    const PredictionRecord slow = m.predict(ex);
    const ModelInput in = m.input(ex, false);
    nn::Graph g(false);
    const EncoderOutput enc = m.encode(g, in);
    const PredictionRecord quick = Model::finish(ex, fast.decode(enc.h_o.value(), enc.cls.value(), in));
    EXPECT_EQ(to_json(quick), to_json(slow)) << ex.id;
    programs += slow.program.has_value();
  }
  EXPECT_GT(programs, 0u);
}

}  // namespace

TEST(FastDecode, NapgMatchesGraphDecodeUntrained) {
  const Dataset ds = data(6, 0.2);
  for (OpPooling pooling : {OpPooling::Selected, OpPooling::AllRows}) {
    const Model m(config(DecoderType::Napg, 6, pooling), Vocab::build(ds.train, 6));
    expect_same_predictions(m, ds.dev);
  }
}

TEST(FastDecode, NapgMatchesGraphDecodeAfterTraining) {
  const Dataset ds = data(3, 0.2);
  Model m(config(DecoderType::Napg, 3), Vocab::build(ds.train, 3));
  train_model(m, ds.train, {});
  expect_same_predictions(m, ds.dev);
}

TEST(FastDecode, ArMatchesGraphDecode) {
  const Dataset ds = data(3, 0.0);
  Model m(config(DecoderType::Ar, 3), Vocab::build(ds.train, 3));
  expect_same_predictions(m, ds.dev);
  train_model(m, ds.train, {});
  expect_same_predictions(m, ds.dev);
}

TEST(FastDecode, ArWithoutGrammarMaskMatches) {
  const Dataset ds = data(2, 0.0);
  RunConfig c = config(DecoderType::Ar, 2);
  c.ar.grammar_mask = false;
  const Model m(c, Vocab::build(ds.train, 2));
  const FastDecoder fast = m.fast_decoder();
  for (const Example& ex : ds.dev) {
    const ModelInput in = m.input(ex, false);
    nn::Graph g(false);
    const EncoderOutput enc = m.encode(g, in);
    EXPECT_EQ(to_json(Model::finish(ex, fast.decode(enc.h_o.value(), enc.cls.value(), in))), to_json(m.predict(ex))) << ex.id;
  }
}
