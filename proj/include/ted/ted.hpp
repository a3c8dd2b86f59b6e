#pragma once

#include "ted/app.hpp"
#include "ted/checkpoint.hpp"
#include "ted/corpus.hpp"
#include "ted/errors.hpp"
#include "ted/gradcheck.hpp"
#include "ted/io.hpp"
#include "ted/metrics.hpp"
#include "ted/model.hpp"
#include "ted/objectives.hpp"
#include "ted/ops.hpp"
#include "ted/optimizer.hpp"
#include "ted/rng.hpp"
#include "ted/search.hpp"
#include "ted/special_tokens.hpp"
#include "ted/stopwords.hpp"
#include "ted/tensor.hpp"
#include "ted/text.hpp"
#include "ted/tokenizer.hpp"
#include "ted/trainer.hpp"
