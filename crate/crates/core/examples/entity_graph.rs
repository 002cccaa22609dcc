// Builds the entity graph and marks nodes of initially MaybeKnown pairs and
// of pairs that moved from WeaklyKnown to MaybeKnown.

use std::collections::BTreeMap;

use knowprobe::graph::{build_graph, label_nodes, PairRoles, RuleSet};
use knowprobe::model::{validate_corpus, ClassificationSnapshot, KnowledgeClass, QaPair};

pub fn run_example() -> knowprobe::Result<String> {
    let corpus = validate_corpus(vec![
        QaPair::new("a", "Who wrote Dune?", &["Frank Herbert"]),
        QaPair::new("b", "Where was Frank Herbert born?", &["Tacoma"]),
        QaPair::new("c", "Who directed Alien?", &["Ridley Scott"]),
        QaPair::new("d", "What is the capital of Peru?", &["Lima"]),
    ])?;
    use KnowledgeClass::*;
    let before: BTreeMap<String, KnowledgeClass> =
        [("a", MaybeKnown), ("b", WeaklyKnown), ("c", WeaklyKnown), ("d", Unknown)]
            .into_iter()
            .map(|(id, c)| (id.to_string(), c))
            .collect();
    let mut after = before.clone();
    after.insert("b".into(), MaybeKnown);
    after.insert("c".into(), MaybeKnown);
    let snap0 = ClassificationSnapshot::new("m", "example", 0, before);
    let snap1 = ClassificationSnapshot::new("m/stage1", "example", 0, after);

    let built = build_graph(corpus.pairs(), &RuleSet::default());
    let labels = label_nodes(&built.graph, &PairRoles::from_snapshots(&snap0, &snap1));
    Ok(format!("{}\n{}\n{}", built.graph.edge_list(), labels.sidecar(), labels.render_counts()))
}

fn main() -> knowprobe::Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
