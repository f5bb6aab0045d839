#pragma once

// umbrella header

#include "appemb/catalog.hpp"
#include "appemb/eval.hpp"
#include "appemb/graph.hpp"
#include "appemb/infer_store.hpp"
#include "appemb/ingest.hpp"
#include "appemb/model.hpp"
#include "appemb/rng.hpp"
#include "appemb/serialize.hpp"
#include "appemb/synthgen.hpp"
#include "appemb/tensor.hpp"
#include "appemb/train.hpp"
