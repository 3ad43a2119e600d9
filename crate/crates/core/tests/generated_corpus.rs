use eqa_core::agent::{Agent, AgentConfig, EpisodeStatus};
use eqa_core::dataset::{generate, generate_world, CategoryCounts, TemplateSet, WorldGenOptions};
use eqa_core::environment::WorldTruth;
use eqa_core::language_parsing::LanguageParser;
use eqa_core::llm_planner::PlannerBackend;

#[test]
fn agent_matches_oracle_on_visible_worlds() {
    let agent = Agent::new(LanguageParser::default(), PlannerBackend::default(), AgentConfig::default());
    let mut wrong = Vec::new();
    let mut total = 0;
    for seed in 0..8u64 {
        let id = format!("gen{seed}");
        let wf = generate_world(&id, seed, &WorldGenOptions::default());
        let world = WorldTruth::from_world_file(&wf, &id).unwrap();
        for r in generate(&world, &TemplateSet::default(), seed, &CategoryCounts::uniform(15)) {
            total += 1;
            let trace = agent.run_episode(&r.to_question(), &world);
            if trace.status != EpisodeStatus::Answered || trace.answer != r.gold_answer {
                wrong.push(format!("{} | {} | gold={} got={:?} {:?} {:?}", r.id, r.question, r.gold_answer, trace.answer, trace.status, trace.error));
            }
        }
    }
    assert!(total >= 200, "{total}");
    assert!(wrong.is_empty(), "{} of {total} wrong:\n{}", wrong.len(), wrong.join("\n"));
}

#[test]
fn template_parser_reads_generated_questions() {
    use eqa_core::language_parsing::Question;
    let agent = Agent::new(LanguageParser::default(), PlannerBackend::default(), AgentConfig::default());
    let mut wrong = Vec::new();
    let mut total = 0;
    for seed in 0..8u64 {
        let id = format!("gen{seed}");
        let wf = generate_world(&id, seed, &WorldGenOptions::default());
        let world = WorldTruth::from_world_file(&wf, &id).unwrap();
        for r in generate(&world, &TemplateSet::default(), seed, &CategoryCounts::uniform(15)) {
            total += 1;
            let trace = agent.run_episode(&Question::new(&r.question), &world);
            if trace.answer != r.gold_answer {
                wrong.push(format!("{} | gold={} got={:?} {:?}", r.question, r.gold_answer, trace.answer, trace.error));
            }
        }
    }
    assert!(wrong.is_empty(), "{} of {total} wrong:\n{}", wrong.len(), wrong.join("\n"));
}
