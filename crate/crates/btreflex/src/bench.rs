//! Benchmark harness: drives the closed loop (plan → execute → evaluate →
//! refine, at most 5 iterations) over the task suite, injects plan-level
//! failures for evaluator scoring, and computes SR and Det/Loc/Exp reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bt::parse_bt;
use crate::capture::execute_mission;
use crate::eval::{
    evaluate_final_state_baseline, evaluate_llm, evaluate_oracle, goal_spec_for, score_evaluation,
    EvaluationQualityMetrics, EvaluationVerdict, GroundTruth, Outcome,
};
use crate::experience::ExperienceBase;
use crate::llm::{generate_plan, Gateway, MockEntry, MockScript};
use crate::refine::{refine_iteration, ReflectiveExperience};
use crate::sim::{load_scene_seeded, task_category, Scene, SimError};
use crate::strategy::StrategySpace;

pub const MAX_ITERATIONS: u32 = 5;
pub const ALL_TASKS: [u32; 11] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("scene error: {0}")]
    Scene(#[from] SimError),
    #[error("max_iters must be in 1..=5, got {0}")]
    BadIterationCap(u32),
    #[error("fault corpus is empty")]
    EmptyCorpus,
    #[error("no transcript for task {0}")]
    MissingTranscript(u32),
    #[error("evaluation error: {0}")]
    Eval(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorMode {
    Oracle,
    Llm,
    FinalState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: u32,
    pub tree_digest: String,
    pub tree_xml: String,
    pub verdict: EvaluationVerdict,
    pub experiences: Vec<ReflectiveExperience>,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MissionRecord {
    pub task_id: u32,
    pub trial: u32,
    pub success_iteration: Option<u32>,
    pub traces: Vec<IterationTrace>,
}

/// Run one mission through the closed loop. Iteration 1 generates the plan
/// via the gateway (with retrieved experiences injected into the prompt);
/// later iterations refine the previous tree. Stops at the first Success or
/// at the iteration cap. Experiences land in the base before the next round.
pub fn run_mission_loop(
    scene: &Scene,
    space: &StrategySpace,
    gateway: &mut Gateway,
    mut exp_base: Option<&mut ExperienceBase>,
    max_iters: u32,
    evaluator: EvaluatorMode,
) -> Result<(bool, Vec<IterationTrace>), BenchError> {
    if max_iters == 0 || max_iters > MAX_ITERATIONS {
        return Err(BenchError::BadIterationCap(max_iters));
    }
    let goal = goal_spec_for(scene.task_id, &scene.instruction, &scene.world)
        .map_err(|e| BenchError::Eval(e.to_string()))?;
    let retrieved: Vec<String> = exp_base
        .as_ref()
        .map(|b| b.retrieve(&scene.instruction, 3).iter().map(|h| h.render()).collect())
        .unwrap_or_default();

    let mut traces = Vec::new();
    let start = std::time::Instant::now();
    let mut tree = match generate_plan(&scene.instruction, space, &retrieved, gateway) {
        Ok(t) => t,
        Err(e) => {
            traces.push(IterationTrace {
                iteration: 1,
                tree_digest: String::new(),
                tree_xml: String::new(),
                verdict: EvaluationVerdict {
                    outcome: Outcome::PlanFailure,
                    explanation: format!("plan generation failed: {}", e),
                    fault_action_index: Some(0),
                    fault_node_id: None,
                    cause: Some("plan_generation".to_string()),
                    confidence: 1.0,
                },
                experiences: Vec::new(),
                wall_time_ms: start.elapsed().as_millis() as u64,
            });
            return Ok((false, traces));
        }
    };

    for iteration in 1..=max_iters {
        let iter_start = std::time::Instant::now();
        let run = execute_mission(&tree, scene, space, 2000)
            .map_err(|e| BenchError::Eval(e.to_string()))?;
        let verdict = match evaluator {
            EvaluatorMode::Oracle => {
                evaluate_oracle(&run.sequence, &goal).map_err(|e| BenchError::Eval(e.to_string()))?
            }
            EvaluatorMode::FinalState => evaluate_final_state_baseline(&run.sequence, &goal)
                .map_err(|e| BenchError::Eval(e.to_string()))?,
            EvaluatorMode::Llm => {
                let traj = crate::cmsr::cmsr(&run.sequence, Some(&scene.world))
                    .map_err(|e| BenchError::Eval(e.to_string()))?;
                evaluate_llm(&traj, &scene.instruction, gateway)
                    .map_err(|e| BenchError::Eval(e.to_string()))?
            }
        };

        let success = verdict.outcome == Outcome::Success;
        let mut experiences = Vec::new();
        if !success && iteration < max_iters {
            match refine_iteration(
                &tree,
                &verdict,
                &run.sequence,
                Some(&goal),
                space,
                exp_base.as_deref_mut(),
                Some(gateway),
                scene.task_id,
                &scene.instruction,
                iteration,
            ) {
                Ok((next, exps)) => {
                    experiences = exps;
                    tree = next;
                }
                // A faulted refinement counts as a failed iteration; the loop
                // continues with the unmodified tree.
                Err(_) => {}
            }
        }
        traces.push(IterationTrace {
            iteration,
            tree_digest: tree.source_digest.clone(),
            tree_xml: crate::bt::serialize_bt(&tree),
            verdict,
            experiences,
            wall_time_ms: iter_start.elapsed().as_millis() as u64,
        });
        if success {
            return Ok((true, traces));
        }
    }
    Ok((false, traces))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task_id: u32,
    pub category: String,
    pub trials: u32,
    pub successes: u32,
    pub sr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: String,
    pub trials: u32,
    pub successes: u32,
    pub sr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionReport {
    pub cases: usize,
    pub oracle: EvaluationQualityMetrics,
    pub final_state: EvaluationQualityMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_total: u32,
    /// N_success^(i): missions first succeeding at iteration i (1-based).
    pub n_success_per_iteration: Vec<u32>,
    pub sr: f64,
    pub per_task: Vec<TaskRow>,
    pub per_category: Vec<CategoryRow>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub injection: Option<InjectionReport>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str("| Category | Trials | Successes | SR |\n|---|---|---|---|\n");
        for row in &self.per_category {
            out.push_str(&format!(
                "| {} | {} | {} | {:.2}% |\n",
                row.category,
                row.trials,
                row.successes,
                row.sr * 100.0
            ));
        }
        out.push_str(&format!(
            "| **Overall** | {} | {} | {:.2}% |\n",
            self.n_total,
            self.n_success_per_iteration.iter().sum::<u32>(),
            self.sr * 100.0
        ));
        if let Some(inj) = &self.injection {
            out.push_str(&format!(
                "\n| Evaluator | Det | Loc | Exp |\n|---|---|---|---|\n\
                 | continuous oracle | {:.4} | {:.4} | {:.4} |\n\
                 | final-state baseline | {:.4} | {:.4} | {:.4} |\n",
                inj.oracle.det,
                inj.oracle.loc,
                inj.oracle.exp,
                inj.final_state.det,
                inj.final_state.loc,
                inj.final_state.exp,
            ));
        }
        out
    }
}

/// SR = Σ_i N_success^(i) / N_total.
pub fn compute_sr(n_success_per_iteration: &[u32], n_total: u32) -> f64 {
    if n_total == 0 {
        return 0.0;
    }
    n_success_per_iteration.iter().sum::<u32>() as f64 / n_total as f64
}

pub struct SuiteResult {
    pub report: MetricsReport,
    pub missions: Vec<MissionRecord>,
}

/// Run the task suite with per-mission gateways built from the transcript
/// map. Deterministic given the seed and scripts.
pub fn run_suite(
    task_ids: &[u32],
    trials_per_task: u32,
    transcripts: &BTreeMap<u32, MockScript>,
    mut exp_base: Option<&mut ExperienceBase>,
    seed: u64,
    max_iters: u32,
) -> Result<SuiteResult, BenchError> {
    let space = StrategySpace::drone_default();
    let mut missions = Vec::new();
    let mut n_success_per_iteration = vec![0u32; MAX_ITERATIONS as usize];
    let mut per_task = Vec::new();
    let mut category_acc: BTreeMap<String, (u32, u32)> = BTreeMap::new();

    for &task_id in task_ids {
        let scene = load_scene_seeded(task_id, seed)?;
        let script = transcripts
            .get(&task_id)
            .ok_or(BenchError::MissingTranscript(task_id))?;
        let mut successes = 0u32;
        for trial in 1..=trials_per_task {
            let mut gateway = Gateway::mock(script.clone());
            let (ok, traces) = run_mission_loop(
                &scene,
                &space,
                &mut gateway,
                exp_base.as_deref_mut(),
                max_iters,
                EvaluatorMode::Oracle,
            )?;
            let success_iteration = ok.then(|| traces.last().unwrap().iteration);
            if let Some(i) = success_iteration {
                successes += 1;
                n_success_per_iteration[(i - 1) as usize] += 1;
            }
            missions.push(MissionRecord { task_id, trial, success_iteration, traces });
        }
        let category = task_category(task_id).unwrap_or("Unknown").to_string();
        let entry = category_acc.entry(category.clone()).or_insert((0, 0));
        entry.0 += trials_per_task;
        entry.1 += successes;
        per_task.push(TaskRow {
            task_id,
            category,
            trials: trials_per_task,
            successes,
            sr: successes as f64 / trials_per_task as f64,
        });
    }

    let n_total = task_ids.len() as u32 * trials_per_task;
    let sr = compute_sr(&n_success_per_iteration, n_total);
    let per_category = category_acc
        .into_iter()
        .map(|(category, (trials, successes))| CategoryRow {
            category,
            trials,
            successes,
            sr: successes as f64 / trials as f64,
        })
        .collect();
    Ok(SuiteResult {
        report: MetricsReport {
            n_total,
            n_success_per_iteration,
            sr,
            per_task,
            per_category,
            injection: None,
        },
        missions,
    })
}

// ---------------------------------------------------------------------------
// Reference plans and mock transcripts
// ---------------------------------------------------------------------------

/// The plan the scripted planner proposes at iteration 1. Tasks 4 and 5
/// deliberately start with the two structural flaw classes so the closed loop
/// exercises the refiner; everything else starts correct.
pub fn reference_plan_xml(task_id: u32, scene: &Scene) -> Result<String, BenchError> {
    let find = |kind: crate::sim::ObjectKind| {
        scene
            .world
            .objects
            .iter()
            .find(|o| o.kind == kind)
            .ok_or(BenchError::Scene(SimError::UnknownTask(task_id)))
    };
    let xml = match task_id {
        1 => r#"<BehaviorTree><Sequence>
  <Takeoff height="1"/>
  <MoveForward distance="2"/>
  <MoveLeft distance="2"/>
  <Land/>
</Sequence></BehaviorTree>"#
            .to_string(),
        2 => r#"<BehaviorTree><Sequence>
  <Takeoff height="1"/>
  <FlyToCoordinates x="2" y="0" z="1"/>
  <FlyToCoordinates x="2" y="2" z="1"/>
  <FlyToCoordinates x="0" y="2" z="1"/>
  <FlyToCoordinates x="0" y="0" z="1"/>
  <Land/>
</Sequence></BehaviorTree>"#
            .to_string(),
        3 => r#"<BehaviorTree><Sequence>
  <Takeoff height="1"/>
  <FlyToCoordinates x="0" y="1" z="1"/>
  <FlyToCoordinates x="4" y="1" z="1"/>
  <Land/>
</Sequence></BehaviorTree>"#
            .to_string(),
        4 => r#"<BehaviorTree><Sequence>
  <Takeoff height="1"/>
  <ForwardDetect target="Balloon"/>
  <Land/>
</Sequence></BehaviorTree>"#
            .to_string(),
        5 => r#"<BehaviorTree><Sequence>
  <Takeoff height="1.2"/>
  <Sequence>
    <Sequence><ForwardDetect target="SquareFrame"/></Sequence>
    <Sequence><TurnLeft angle="120"/><ForwardDetect target="SquareFrame"/></Sequence>
    <Sequence><TurnLeft angle="120"/><ForwardDetect target="SquareFrame"/></Sequence>
  </Sequence>
  <Land/>
</Sequence></BehaviorTree>"#
            .to_string(),
        6 => {
            let mark = find(crate::sim::ObjectKind::LandingMark)?;
            format!(
                r#"<BehaviorTree><Sequence>
  <Takeoff height="1.5"/>
  <FlyToCoordinates x="{x}" y="{y}" z="1.5"/>
  <DownwardDetect target="LandingMark"/>
  <Land/>
</Sequence></BehaviorTree>"#,
                x = mark.x,
                y = mark.y
            )
        }
        7 => r#"<BehaviorTree><Sequence>
  <Takeoff height="1"/>
  <FlyToCoordinates x="0" y="1" z="1"/>
  <FlyToCoordinates x="2" y="1" z="1"/>
  <Land/>
</Sequence></BehaviorTree>"#
            .to_string(),
        8 => r#"<BehaviorTree><Sequence>
  <Takeoff height="1"/>
  <FlyToCoordinates x="0" y="1" z="1"/>
  <FlyToCoordinates x="2" y="1" z="1"/>
  <FlyToCoordinates x="2" y="0" z="1"/>
  <Land/>
</Sequence></BehaviorTree>"#
            .to_string(),
        9 => r#"<BehaviorTree><Sequence>
  <Takeoff height="1.2"/>
  <ForwardDetect target="SquareFrame"/>
  <FlyToCoordinates x="2" y="0" z="1.2"/>
  <Land/>
</Sequence></BehaviorTree>"#
            .to_string(),
        10 => {
            let frame = find(crate::sim::ObjectKind::SquareFrame)?;
            format!(
                r#"<BehaviorTree><Sequence>
  <Takeoff height="1.2"/>
  <RetryUntilSuccessful num_attempts="8">
    <Sequence><TurnLeft angle="45"/><ForwardDetect target="SquareFrame"/></Sequence>
  </RetryUntilSuccessful>
  <FlyToCoordinates x="{x}" y="{y}" z="1.2"/>
  <Land/>
</Sequence></BehaviorTree>"#,
                x = frame.x,
                y = frame.y
            )
        }
        11 => {
            let mark = find(crate::sim::ObjectKind::LandingMark)?;
            format!(
                r#"<BehaviorTree><Sequence>
  <Takeoff height="1"/>
  <FlyToCoordinates x="0" y="1" z="1"/>
  <FlyToCoordinates x="{x}" y="{y}" z="1"/>
  <DownwardDetect target="LandingMark"/>
  <Land/>
</Sequence></BehaviorTree>"#,
                x = mark.x,
                y = mark.y
            )
        }
        other => return Err(BenchError::Scene(SimError::UnknownTask(other))),
    };
    Ok(xml)
}

/// Scripted planner transcript for one task: one strict entry keyed on the
/// task instruction.
pub fn reference_transcript(task_id: u32, scene: &Scene) -> Result<MockScript, BenchError> {
    Ok(MockScript {
        entries: vec![MockEntry {
            match_substrings: vec![scene.instruction.clone()],
            response: reference_plan_xml(task_id, scene)?,
        }],
        strict: true,
    })
}

pub fn reference_transcripts(seed: u64) -> Result<BTreeMap<u32, MockScript>, BenchError> {
    let mut out = BTreeMap::new();
    for task_id in ALL_TASKS {
        let scene = load_scene_seeded(task_id, seed)?;
        out.insert(task_id, reference_transcript(task_id, &scene)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Fault injection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FaultInjection {
    pub task_id: u32,
    pub template: String,
    pub plan_xml: String,
    pub expected_cause: String,
    pub expected_fault_index: usize,
}

const SQUARE_CORNERS: [(f64, f64); 4] = [(2.0, 0.0), (2.0, 2.0), (0.0, 2.0), (0.0, 0.0)];

fn square_plan(corners: &[(f64, f64)], z: f64, land: bool) -> String {
    let mut xml = format!("<BehaviorTree><Sequence>\n  <Takeoff height=\"{z}\"/>\n");
    for (x, y) in corners {
        xml.push_str(&format!("  <FlyToCoordinates x=\"{x}\" y=\"{y}\" z=\"{z}\"/>\n"));
    }
    if land {
        xml.push_str("  <Land/>\n");
    }
    xml.push_str("</Sequence></BehaviorTree>");
    xml
}

/// Synthetic plan-level failure corpus: 8 mutation templates expanded into
/// variants; each case carries the analytically expected fault locus and
/// cause label. All mutated plans still parse and validate.
pub fn build_fault_corpus() -> Vec<FaultInjection> {
    let mut corpus = Vec::new();

    // 1. wrong_waypoint: one square corner displaced.
    let deltas = [(1.2, 0.0), (0.0, 1.2), (1.2, 1.2), (-1.2, 0.0), (0.0, -1.2), (1.2, -1.2)];
    for k in 0..4usize {
        for (dx, dy) in deltas {
            let wrong = (SQUARE_CORNERS[k].0 + dx, SQUARE_CORNERS[k].1 + dy);
            assert!(
                SQUARE_CORNERS
                    .iter()
                    .all(|(cx, cy)| ((wrong.0 - cx).powi(2) + (wrong.1 - cy).powi(2)).sqrt() > 0.4),
                "wrong waypoint too close to a true corner"
            );
            let mut corners = SQUARE_CORNERS.to_vec();
            corners[k] = wrong;
            corpus.push(FaultInjection {
                task_id: 2,
                template: "wrong_waypoint".to_string(),
                plan_xml: square_plan(&corners, 1.0, true),
                expected_cause: "waypoint_order".to_string(),
                // Arrival at corner k+1 breaks order; a wrong last corner is
                // only caught when the mission ends incomplete.
                expected_fault_index: if k < 3 { k + 2 } else { 5 },
            });
        }
    }

    // 2. skipped_corner: one square corner removed.
    for k in 0..4usize {
        for z in [0.8, 1.0, 1.2] {
            let corners: Vec<(f64, f64)> = SQUARE_CORNERS
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != k)
                .map(|(_, c)| *c)
                .collect();
            corpus.push(FaultInjection {
                task_id: 2,
                template: "skipped_corner".to_string(),
                plan_xml: square_plan(&corners, z, true),
                expected_cause: "waypoint_order".to_string(),
                expected_fault_index: if k < 3 { k + 1 } else { 4 },
            });
        }
    }

    // 3. zone_crossing: routes through the no-fly grid on task 3.
    // (waypoint list, index of the aborting step)
    let routes: Vec<(Vec<(f64, f64)>, usize)> = vec![
        (vec![(4.0, 1.0)], 1),
        (vec![(1.0, 3.0)], 1),
        (vec![(2.0, 0.0)], 1),
        (vec![(0.0, 0.0), (4.0, 0.0)], 2),
        (vec![(0.0, 3.0), (4.0, 3.0)], 2),
    ];
    for (route, abort_idx) in &routes {
        for z in [0.8, 1.0, 1.2] {
            corpus.push(FaultInjection {
                task_id: 3,
                template: "zone_crossing".to_string(),
                plan_xml: square_plan(route, z, true),
                expected_cause: "region_avoidance".to_string(),
                expected_fault_index: *abort_idx,
            });
        }
    }

    // 4. missing_search: single detect with the balloon out of the initial
    // field of view (balloon bearing from origin is ~123.7 degrees).
    for angle in [0.0, 30.0, 195.0, 210.0, 240.0, 270.0, 300.0, 330.0, 345.0] {
        for h in [1.0, 1.3] {
            let turn = if angle == 0.0 {
                String::new()
            } else {
                format!("  <TurnLeft angle=\"{angle}\"/>\n")
            };
            let detect_idx = if angle == 0.0 { 1 } else { 2 };
            corpus.push(FaultInjection {
                task_id: 4,
                template: "missing_search".to_string(),
                plan_xml: format!(
                    "<BehaviorTree><Sequence>\n  <Takeoff height=\"{h}\"/>\n{turn}  <ForwardDetect target=\"Balloon\"/>\n  <Land/>\n</Sequence></BehaviorTree>"
                ),
                expected_cause: "object_detection".to_string(),
                expected_fault_index: detect_idx,
            });
        }
    }

    // 5. sequence_fallback_swap: detect alternatives wired with Sequence, so
    // the first miss aborts the mission.
    for n in [3usize, 4, 6] {
        for offset in [0.0, 90.0, 120.0, 150.0] {
            let step = 360.0 / n as f64;
            let mut branches = String::from("    <Sequence><ForwardDetect target=\"Balloon\"/></Sequence>\n");
            for _ in 1..n {
                branches.push_str(&format!(
                    "    <Sequence><TurnLeft angle=\"{step}\"/><ForwardDetect target=\"Balloon\"/></Sequence>\n"
                ));
            }
            let turn = if offset == 0.0 {
                String::new()
            } else {
                format!("  <TurnRight angle=\"{offset}\"/>\n")
            };
            corpus.push(FaultInjection {
                task_id: 4,
                template: "sequence_fallback_swap".to_string(),
                plan_xml: format!(
                    "<BehaviorTree><Sequence>\n  <Takeoff height=\"1\"/>\n{turn}  <Sequence>\n{branches}  </Sequence>\n  <Land/>\n</Sequence></BehaviorTree>"
                ),
                expected_cause: "object_detection".to_string(),
                expected_fault_index: if offset == 0.0 { 1 } else { 2 },
            });
        }
    }

    // 6. missing_precondition: land on the mark without ever detecting it.
    let mark_scene = load_scene_seeded(6, 0).expect("task 6 scene");
    let mark = mark_scene
        .world
        .objects
        .iter()
        .find(|o| o.kind == crate::sim::ObjectKind::LandingMark)
        .unwrap();
    for z in [1.2, 1.5] {
        for hovers in 0..3usize {
            let hover_xml = "  <Hover duration=\"1\"/>\n".repeat(hovers);
            corpus.push(FaultInjection {
                task_id: 6,
                template: "missing_precondition".to_string(),
                plan_xml: format!(
                    "<BehaviorTree><Sequence>\n  <Takeoff height=\"{z}\"/>\n  <FlyToCoordinates x=\"{}\" y=\"{}\" z=\"{z}\"/>\n{hover_xml}  <Land/>\n</Sequence></BehaviorTree>",
                    mark.x, mark.y
                ),
                expected_cause: "object_detection".to_string(),
                expected_fault_index: 2 + hovers,
            });
        }
    }

    // 7. wrong_turn_direction: task 1 turns right instead of left.
    for hovers in 0..3usize {
        let hover_xml = "  <Hover duration=\"1\"/>\n".repeat(hovers);
        corpus.push(FaultInjection {
            task_id: 1,
            template: "wrong_turn_direction".to_string(),
            plan_xml: format!(
                "<BehaviorTree><Sequence>\n  <Takeoff height=\"1\"/>\n  <MoveForward distance=\"2\"/>\n  <MoveRight distance=\"2\"/>\n{hover_xml}  <Land/>\n</Sequence></BehaviorTree>"
            ),
            expected_cause: "waypoint_order".to_string(),
            expected_fault_index: 3 + hovers,
        });
        corpus.push(FaultInjection {
            task_id: 1,
            template: "wrong_turn_direction".to_string(),
            plan_xml: format!(
                "<BehaviorTree><Sequence>\n  <Takeoff height=\"1\"/>\n  <MoveForward distance=\"2\"/>\n  <TurnRight angle=\"90\"/>\n  <MoveForward distance=\"2\"/>\n{hover_xml}  <Land/>\n</Sequence></BehaviorTree>"
            ),
            expected_cause: "waypoint_order".to_string(),
            expected_fault_index: 4 + hovers,
        });
    }

    // 8. premature_land: square mission cut short after j+1 corners.
    for j in 0..3usize {
        for z in [0.8, 1.0, 1.2] {
            let corners = SQUARE_CORNERS[..=j].to_vec();
            corpus.push(FaultInjection {
                task_id: 2,
                template: "premature_land".to_string(),
                plan_xml: square_plan(&corners, z, true),
                expected_cause: "waypoint_order".to_string(),
                expected_fault_index: j + 2,
            });
        }
    }

    corpus
}

/// Execute every mutated plan, evaluate it under the given mode, and score
/// Det/Loc/Exp against the injection ground truth.
pub fn inject_and_score(
    corpus: &[FaultInjection],
    mode: EvaluatorMode,
) -> Result<EvaluationQualityMetrics, BenchError> {
    if corpus.is_empty() {
        return Err(BenchError::EmptyCorpus);
    }
    let space = StrategySpace::drone_default();
    let mut verdicts = Vec::new();
    let mut truth = Vec::new();
    for case in corpus {
        let scene = load_scene_seeded(case.task_id, 0)?;
        let tree =
            parse_bt(&case.plan_xml, &space).map_err(|e| BenchError::Eval(e.to_string()))?;
        let run = execute_mission(&tree, &scene, &space, 2000)
            .map_err(|e| BenchError::Eval(e.to_string()))?;
        let goal = goal_spec_for(case.task_id, &scene.instruction, &scene.world)
            .map_err(|e| BenchError::Eval(e.to_string()))?;
        let verdict = match mode {
            EvaluatorMode::Oracle => evaluate_oracle(&run.sequence, &goal),
            EvaluatorMode::FinalState => evaluate_final_state_baseline(&run.sequence, &goal),
            EvaluatorMode::Llm => return Err(BenchError::Eval("llm mode needs a gateway".into())),
        }
        .map_err(|e| BenchError::Eval(e.to_string()))?;
        verdicts.push(verdict);
        truth.push(GroundTruth {
            is_failure: true,
            fault_index: Some(case.expected_fault_index),
            cause: Some(case.expected_cause.clone()),
        });
    }
    score_evaluation(&verdicts, &truth).map_err(|e| BenchError::Eval(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_has_at_least_100_valid_cases() {
        let corpus = build_fault_corpus();
        assert!(corpus.len() >= 100, "only {} cases", corpus.len());
        let space = StrategySpace::drone_default();
        for case in &corpus {
            parse_bt(&case.plan_xml, &space)
                .unwrap_or_else(|e| panic!("{} plan invalid: {e}", case.template));
        }
        let templates: std::collections::BTreeSet<_> =
            corpus.iter().map(|c| c.template.as_str()).collect();
        assert_eq!(templates.len(), 8, "templates: {templates:?}");
    }

    #[test]
    fn oracle_scores_perfectly_on_corpus() {
        let corpus = build_fault_corpus();
        let m = inject_and_score(&corpus, EvaluatorMode::Oracle).unwrap();
        assert_eq!(m.det, 1.0, "Det {m:?}");
        assert_eq!(m.loc, 1.0, "Loc {m:?}");
        assert_eq!(m.exp, 1.0, "Exp {m:?}");
    }

    #[test]
    fn final_state_baseline_det_strictly_lower() {
        let corpus = build_fault_corpus();
        let oracle = inject_and_score(&corpus, EvaluatorMode::Oracle).unwrap();
        let baseline = inject_and_score(&corpus, EvaluatorMode::FinalState).unwrap();
        assert!(baseline.det < oracle.det, "baseline {} vs oracle {}", baseline.det, oracle.det);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(inject_and_score(&[], EvaluatorMode::Oracle), Err(BenchError::EmptyCorpus)));
    }

    #[test]
    fn every_task_converges_within_cap() {
        let transcripts = reference_transcripts(0).unwrap();
        let result = run_suite(&ALL_TASKS, 1, &transcripts, None, 0, MAX_ITERATIONS).unwrap();
        for row in &result.report.per_task {
            assert_eq!(row.successes, row.trials, "task {} failed to converge", row.task_id);
        }
        assert_eq!(result.report.sr, 1.0);
        assert_eq!(result.report.per_category.len(), 4);
        for mission in &result.missions {
            assert!(mission.traces.len() <= MAX_ITERATIONS as usize);
        }
    }

    #[test]
    fn flawed_tasks_need_exactly_two_iterations() {
        let transcripts = reference_transcripts(0).unwrap();
        let space = StrategySpace::drone_default();
        for task_id in [4u32, 5] {
            let scene = load_scene_seeded(task_id, 0).unwrap();
            let mut gw = Gateway::mock(transcripts[&task_id].clone());
            let (ok, traces) =
                run_mission_loop(&scene, &space, &mut gw, None, 5, EvaluatorMode::Oracle).unwrap();
            assert!(ok, "task {task_id} did not converge");
            assert_eq!(traces.len(), 2, "task {task_id} took {} iterations", traces.len());
            assert_eq!(traces[0].experiences.len(), 1);
        }
    }

    #[test]
    fn sr_recomputes_exactly_from_traces() {
        let transcripts = reference_transcripts(0).unwrap();
        let result = run_suite(&ALL_TASKS, 2, &transcripts, None, 0, MAX_ITERATIONS).unwrap();
        let mut per_iter = vec![0u32; MAX_ITERATIONS as usize];
        for m in &result.missions {
            if let Some(i) = m.success_iteration {
                per_iter[(i - 1) as usize] += 1;
            }
        }
        assert_eq!(per_iter, result.report.n_success_per_iteration);
        assert_eq!(compute_sr(&per_iter, result.report.n_total), result.report.sr);
    }

    #[test]
    fn experience_base_grows_during_suite() {
        let dir = tempfile::tempdir().unwrap();
        let mut base = ExperienceBase::open(dir.path()).unwrap();
        let transcripts = reference_transcripts(0).unwrap();
        let before = base.len();
        run_suite(&[4, 5], 1, &transcripts, Some(&mut base), 0, MAX_ITERATIONS).unwrap();
        assert!(base.len() > before, "refinement should have stored experiences");
    }

    #[test]
    fn never_repairing_mock_hits_the_cap() {
        // A planner that emits a hopeless but matcher-proof plan: flying to
        // the wrong place with no failed actions and no waypoint overlap.
        let scene = load_scene_seeded(9, 0).unwrap();
        let script = MockScript {
            entries: vec![MockEntry {
                match_substrings: vec![],
                response: r#"<BehaviorTree><Sequence>
                    <Takeoff height="0.4"/>
                    <Hover duration="1"/>
                    <Land/>
                </Sequence></BehaviorTree>"#
                    .to_string(),
            }],
            strict: false,
        };
        let space = StrategySpace::drone_default();
        let mut gw = Gateway::mock(script);
        let (ok, traces) =
            run_mission_loop(&scene, &space, &mut gw, None, 5, EvaluatorMode::Oracle).unwrap();
        assert!(!ok);
        assert_eq!(traces.len(), 5);
    }

    fn fixtures_dir() -> std::path::PathBuf {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
    }

    // Regenerates the checked-in fixtures. Run manually:
    //   cargo test -p btreflex regen_fixtures -- --ignored
    #[test]
    #[ignore]
    fn regen_fixtures() {
        let dir = fixtures_dir();
        std::fs::create_dir_all(dir.join("transcripts")).unwrap();
        for (task_id, script) in reference_transcripts(0).unwrap() {
            let yaml = serde_yaml::to_string(&script).unwrap();
            std::fs::write(dir.join(format!("transcripts/t{task_id}.yaml")), yaml).unwrap();
        }
        let corpus = build_fault_corpus();
        std::fs::write(dir.join("corpus.json"), serde_json::to_string_pretty(&corpus).unwrap())
            .unwrap();
    }

    #[test]
    fn checked_in_transcripts_match_builders() {
        for (task_id, expected) in reference_transcripts(0).unwrap() {
            let path = fixtures_dir().join(format!("transcripts/t{task_id}.yaml"));
            let text = std::fs::read_to_string(&path)
                .unwrap_or_else(|e| panic!("missing fixture {}: {e}", path.display()));
            let on_disk: MockScript = serde_yaml::from_str(&text).unwrap();
            assert_eq!(on_disk, expected, "stale fixture for task {task_id}");
        }
    }

    #[test]
    fn checked_in_corpus_matches_builder() {
        let text = std::fs::read_to_string(fixtures_dir().join("corpus.json")).unwrap();
        let on_disk: Vec<FaultInjection> = serde_json::from_str(&text).unwrap();
        let expected = build_fault_corpus();
        assert_eq!(on_disk.len(), expected.len());
        for (a, b) in on_disk.iter().zip(&expected) {
            assert_eq!(a.plan_xml, b.plan_xml);
            assert_eq!(a.expected_fault_index, b.expected_fault_index);
            assert_eq!(a.expected_cause, b.expected_cause);
        }
    }

    #[test]
    fn iteration_cap_is_validated() {
        let scene = load_scene_seeded(1, 0).unwrap();
        let space = StrategySpace::drone_default();
        let mut gw = Gateway::mock(MockScript { entries: vec![], strict: false });
        assert!(matches!(
            run_mission_loop(&scene, &space, &mut gw, None, 9, EvaluatorMode::Oracle),
            Err(BenchError::BadIterationCap(9))
        ));
    }
}
