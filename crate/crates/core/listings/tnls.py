def GenerateSample(history_populations,fitness_scores,best_individual,new_individuals_numbers,current_iteration, maximum_iteration,hyperparameters):
     variance=hyperparameters.get('decay_rate', 0.99)**(current_iteration-2)
     if variance<hyperparameters.get('variance_LB', 0.3):
         variance=hyperparameters.get('variance_LB', 0.3)
     new_individuals=[]
     for i in range(new_individuals_numbers):
         tnp=np.array(best_individual)+np.random.randn(len(best_individual))*variance
         tnp=np.round(tnp)
         tnp[np.where(tnp>hyperparameters.get('code_upperbound', 15))]=hyperparameters.get('code_upperbound', 15)
         tnp[np.where(tnp<1)]=1
         tnp=tnp.astype(int)
         new_individuals.append(tnp)
     return new_individuals
