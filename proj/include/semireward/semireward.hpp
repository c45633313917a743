#pragma once

#include "semireward/checkpoint.hpp"
#include "semireward/config.hpp"
#include "semireward/csv.hpp"
#include "semireward/dataset.hpp"
#include "semireward/error.hpp"
#include "semireward/harness.hpp"
#include "semireward/label_codec.hpp"
#include "semireward/metrics.hpp"
#include "semireward/pipeline.hpp"
#include "semireward/rewarder.hpp"
#include "semireward/selection.hpp"
#include "semireward/student.hpp"
#include "semireward/train_config.hpp"
