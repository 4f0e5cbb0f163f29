// Copyright 2026 The sparsecomm Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SPARSECOMM_ERRORS_H_
#define SPARSECOMM_ERRORS_H_

#include <stdexcept>
#include <string>

namespace sparsecomm {

// Base of every error raised by the library. Subclasses name the violated
// contract so callers (and the CLI exit-code mapping) can dispatch on type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SPARSECOMM_DEFINE_ERROR(Name) \
  class Name : public Error {         \
   public:                            \
    using Error::Error;               \
  }

// tensors
SPARSECOMM_DEFINE_ERROR(MalformedGradientError);
SPARSECOMM_DEFINE_ERROR(PreconditionError);
SPARSECOMM_DEFINE_ERROR(BoundsError);
SPARSECOMM_DEFINE_ERROR(ShapeError);

// partition
SPARSECOMM_DEFINE_ERROR(InfeasiblePartitionError);
SPARSECOMM_DEFINE_ERROR(VocabularyBoundsError);

// comm
SPARSECOMM_DEFINE_ERROR(CollectiveContractError);
SPARSECOMM_DEFINE_ERROR(CollectiveTimeoutError);

// schedule / sim
SPARSECOMM_DEFINE_ERROR(DependencyError);
SPARSECOMM_DEFINE_ERROR(RankError);
SPARSECOMM_DEFINE_ERROR(EndOfDataError);
SPARSECOMM_DEFINE_ERROR(SchedulingDeadlockError);

// train
SPARSECOMM_DEFINE_ERROR(DoubleUpdateError);
SPARSECOMM_DEFINE_ERROR(TrainingDivergedError);

// cli
SPARSECOMM_DEFINE_ERROR(ConfigError);

#undef SPARSECOMM_DEFINE_ERROR

}  // namespace sparsecomm

#endif  // SPARSECOMM_ERRORS_H_
