#pragma once

#include "nligen/corpus.hpp"
#include "nligen/experiment.hpp"
#include "nligen/generation.hpp"
#include "nligen/metrics.hpp"
#include "nligen/retrieval.hpp"
#include "nligen/rng.hpp"
#include "nligen/rules.hpp"
#include "nligen/synthetic.hpp"
#include "nligen/template_search.hpp"
#include "nligen/templates.hpp"
#include "nligen/toy_models.hpp"
#include "nligen/training.hpp"
