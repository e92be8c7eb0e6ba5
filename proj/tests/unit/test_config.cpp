#include <gtest/gtest.h>

#include <sstream>

#include "bcisim/config.hpp"

using namespace bcisim;

TEST(Config, DefaultsMatchDocumentedValues) {
  const ExperimentConfig c;
  EXPECT_EQ(c.sweep().gain_values.size(), 150u);
  EXPECT_EQ(c.sweep().d_range.front(), 0);
  EXPECT_EQ(c.sweep().d_range.back(), 30);
  EXPECT_EQ(c.sweep().grid_range.back(), 25);
  EXPECT_EQ(c.task_config().n, 10);
  EXPECT_EQ(c.synth.feature_count, 384);
}

TEST(Config, ReadsKeyValueLines) {
  ExperimentConfig c;
  std::istringstream in(
      "# comment\n"
      "seed = 42\n"
      "\n"
      "synth.noise_std = 2.5   # trailing\n"
      "synth.nonlinearity = saturation\n"
      "task = high-accuracy\n"
      "rnn.hidden_units = 16\n"
      "sweep.alpha_values = 0.5,0.9\n");
  read_config(in, c);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_TRUE(c.seed_given);
  EXPECT_EQ(c.synth.noise_std, 2.5);
  EXPECT_EQ(c.synth.nonlinearity, Nonlinearity::saturation);
  EXPECT_EQ(c.task_config().n, 15);
  EXPECT_EQ(c.pipeline_options().rnn.hidden_units, 16);
  EXPECT_EQ(c.pipeline_options().sweep.alpha_values, (std::vector<double>{0.5, 0.9}));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  ExperimentConfig c;
  EXPECT_THROW(set_config_value(c, "no.such.key", "1"), ConfigError);
  EXPECT_THROW(set_config_value(c, "seed", "abc"), ConfigError);
  EXPECT_THROW(set_config_value(c, "repeats", "3.5"), ConfigError);
  std::istringstream in("seed 4\n");
  EXPECT_THROW(read_config(in, c), ConfigError);
}

TEST(Config, WrittenConfigReadsBackIdentically) {
  ExperimentConfig c;
  set_config_value(c, "seed", "7");
  set_config_value(c, "synth.drift_rate", "0.1");
  set_config_value(c, "sweep.gain_count", "40");
  set_config_value(c, "task", "custom");
  set_config_value(c, "task.n", "6");
  std::ostringstream first;
  write_config(c, first);
  ExperimentConfig d;
  std::istringstream in(first.str());
  read_config(in, d);
  std::ostringstream second;
  write_config(d, second);
  EXPECT_EQ(first.str(), second.str());
  EXPECT_EQ(d.task_config().n, 6);
  EXPECT_EQ(d.sweep().gain_values.size(), 40u);
}

TEST(Config, EveryKeyRoundTrips) {
  const ExperimentConfig c;
  std::ostringstream out;
  write_config(c, out);
  const std::string text = out.str();
  for (const auto& k : config_keys()) EXPECT_NE(text.find(k + " = "), std::string::npos) << k;
}
