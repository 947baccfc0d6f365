// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License. You may obtain
// a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied. See the
// License for the specific language governing permissions and limitations
// under the License.

//! Overlapping community detection on directed graphs.
//!
//! A cover assigns every node a membership vector over communities. Its
//! quality is the overlapping modularity computed in [`qov`], and
//! [`ga::run`] searches for good covers with a steady-state genetic
//! algorithm whose fitness evaluations go through a [`farm::FitnessBackend`].

pub mod belonging;
pub mod farm;
pub mod ga;
pub mod graph;
pub mod qov;
pub mod report;
