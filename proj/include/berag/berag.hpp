#pragma once

#include "berag/errors.hpp"
#include "berag/numerics.hpp"
#include "berag/autodiff.hpp"
#include "berag/types.hpp"
#include "berag/vocab.hpp"
#include "berag/backend.hpp"
#include "berag/oracle_backend.hpp"
#include "berag/tiny_backend.hpp"
#include "berag/bundle.hpp"
#include "berag/decoder.hpp"
#include "berag/parallel.hpp"
#include "berag/training.hpp"
#include "berag/config.hpp"
#include "berag/harness/kbqa.hpp"
#include "berag/harness/needle.hpp"
#include "berag/harness/dataset_io.hpp"
#include "berag/harness/evaluate.hpp"
#include "berag/harness/experiments.hpp"
