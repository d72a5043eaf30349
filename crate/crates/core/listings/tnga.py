def GenerateSample(history_populations,fitness_scores,best_individual,new_individuals_numbers,current_iteration, maximum_iteration,hyperparameters):
    Ranking=np.argsort(fitness_scores['{}'.format(current_iteration-1)])
    elite_num=int(len(fitness_scores['{}'.format(current_iteration-1)])*hyperparameters.get('elite_percentage', 0.9))
    Ranking=Ranking[0:elite_num]
    populations_elite=[history_populations['{}'.format(current_iteration-1)][i].copy() for i in Ranking]
    fitness_scores_elite=[fitness_scores['{}'.format(current_iteration-1)][i] for i in Ranking]
    Rank_elite = np.argsort(fitness_scores_elite)
    p = [ np.maximum(np.log(hyperparameters.get('alpha', 100)/(0.01+k*5)), 0.01) for k in range(len(populations_elite)) ]
    prob = np.zeros(len(populations_elite))
    for idx, i in enumerate(Rank_elite): prob[i] = p[idx]
    new_individuals=[]
    for i in range(new_individuals_numbers//2):
        parents=choices(populations_elite, weights=prob, k=2)
        female=parents[0].copy()
        male=parents[1].copy()
        index=np.arange(len(male))
        np.random.shuffle(index)
        index=index[0:(len(male)//2)]
        tnp=female[index]
        female[index]=male[index]
        male[index]=tnp
        new_individuals.append(male)
        new_individuals.append(female)
    if np.mod(new_individuals_numbers,2)!=0:
        tnp=new_individuals[-1].copy()
        np.random.shuffle(tnp)
        new_individuals.append(tnp)
    for i in range(new_individuals_numbers):
        mask = np.random.uniform(0,1,[len(new_individuals[0])])<hyperparameters.get('mutation_rate', 0.25)
        for j in range(len(new_individuals[0])):
            if mask[j]:
                mutate_range=np.arange(1,hyperparameters.get('code_upperbound', 15)+1)
                mutate_range=np.delete(mutate_range, np.where(mutate_range == new_individuals[i][j]))
                np.random.shuffle(mutate_range)
                new_individuals[i][j]=mutate_range[0]
    return new_individuals
