#pragma once

#include "teaser/dataset.hpp"
#include "teaser/gallery.hpp"
#include "teaser/synthetic.hpp"
#include "teaser/train.hpp"

// A synthetic task small enough to train in well under a second.
struct TinyTask {
  teaser::SyntheticTaskConfig task;
  teaser::Dataset data;
  teaser::GalleryBundle bundle;
  teaser::TrainConfig train;
  std::vector<teaser::Example> train_set;
  std::vector<teaser::Example> val_set;
};

inline teaser::SyntheticTaskConfig tiny_task_config(std::uint64_t seed = 0) {
  teaser::SyntheticTaskConfig c;
  c.n_findings = 10;
  c.dim = 16;
  c.n_train = 80;
  c.n_val = 10;
  c.n_test = 20;
  c.patches_per_image = 12;
  c.max_findings = 4;
  c.seed = seed;
  return c;
}

inline teaser::TrainConfig tiny_train_config(std::uint64_t seed = 0) {
  teaser::TrainConfig t;
  t.model.D = 16;
  t.model.K = 4;
  t.model.M = 5;
  t.model.J = 2;
  t.model.L_a = 1;
  t.model.L = 1;
  t.model.heads = 2;
  t.model.mlp_ratio = 2;
  t.model.seed = seed;
  t.epochs = 3;
  t.lr = 1e-3;
  t.batch_size = 4;
  t.seed = seed;
  return t;
}

inline TinyTask make_tiny_task(std::uint64_t seed = 0) {
  TinyTask t;
  t.task = tiny_task_config(seed);
  t.data = teaser::generate_synthetic_task(t.task);
  teaser::GalleryBuildOptions g;
  g.clusters = t.task.n_findings;
  g.seed = seed;
  t.bundle = teaser::build_gallery_bundle(t.data.train.corpus, t.data.train.embeddings, g);
  t.train = tiny_train_config(seed);
  const auto rarity = teaser::rarity_from_bundle(t.bundle);
  t.train_set = teaser::make_examples(t.data.train, t.train.model, rarity);
  t.val_set = teaser::make_examples(t.data.val, t.train.model, rarity);
  return t;
}
