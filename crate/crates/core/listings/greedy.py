def GenerateSample(history_populations,fitness_scores,best_individual,new_individuals_numbers,current_iteration, maximum_iteration,hyperparameters):
    upper = hyperparameters.get('code_upperbound', 15)
    best = [int(g) for g in best_individual]
    neighbours = []
    for j, g in enumerate(best):
        if g > 1:
            n = best.copy()
            n[j] = g - 1
            neighbours.append(n)
        if g < upper:
            n = best.copy()
            n[j] = g + 1
            neighbours.append(n)
    if len(neighbours) == 0:
        return [best.copy() for _ in range(new_individuals_numbers)]
    random.shuffle(neighbours)
    new_individuals = neighbours[:new_individuals_numbers]
    while len(new_individuals) < new_individuals_numbers:
        new_individuals.append(random.choice(neighbours))
    return new_individuals
